import itertools
import math

import numpy as np
import pytest
from scipy import integrate

from tcp_dipoles import combinatorics as CB


def brute_count(p):
    """Pure-python scan of all maps: fixed-point free, every cycle of length two."""
    counts = {}
    for phi in itertools.product(range(p), repeat=p):
        if any(phi[i] == i for i in range(p)):
            continue
        ok = True
        for i in range(p):
            v = i
            for _ in range(p):
                v = phi[v]
            if phi[phi[v]] != v:
                ok = False
                break
        if ok:
            k = sum(1 for i in range(p) if phi[phi[i]] == i and i < phi[i])
            counts[k] = counts.get(k, 0) + 1
    return counts


class TestCounts:
    @pytest.mark.parametrize("p,k,expected", [(2, 1, 1), (3, 1, 6), (4, 2, 3), (4, 1, 48)])
    def test_spot_values(self, p, k, expected):
        c = CB.count_nn_graphs(p, k)
        assert c.count == expected
        assert c.log_count == pytest.approx(math.log(expected))

    @pytest.mark.parametrize("p", range(2, 7))
    def test_formula_equals_enumeration(self, p):
        enum = CB.enumerate_nn_graphs(p).counts()
        assert enum == brute_count(p)
        assert enum == {k: CB.count_nn_graphs(p, k).count for k in range(1, p // 2 + 1)}

    @pytest.mark.slow
    def test_formula_equals_enumeration_p8(self):
        enum = CB.enumerate_nn_graphs(8).counts()
        assert enum == {k: CB.count_nn_graphs(8, k).count for k in range(1, 5)}

    def test_enumeration_p3_all_one_component(self):
        e = CB.enumerate_nn_graphs(3)
        assert len(e) == 6
        assert set(e.k) == {1}

    def test_rejects(self):
        with pytest.raises(ValueError):
            CB.count_nn_graphs(4, 3)
        with pytest.raises(ValueError):
            CB.enumerate_nn_graphs(9)

    def test_log_gamma_branch_matches_exact(self):
        for p, k in [(50, 7), (200, 100), (199, 3)]:
            c = CB.count_nn_graphs(p, k)
            assert CB._log_count(p, k) == pytest.approx(math.log(c.count), rel=1e-12)
        big = CB.count_nn_graphs(10**4, 3000)
        assert big.count is None and math.isfinite(big.log_count)

    @pytest.mark.parametrize("k", [1, 100, 1000, 2500, 3333, 4999, 5000])
    def test_stirling_consistency(self, k):
        p = 10**4
        c = CB.count_nn_graphs(p, k).log_count
        assert abs(c - CB.stirling_log_count(p, k)) / abs(c) <= 0.05


class TestDirichlet:
    def test_examples(self):
        assert CB.dirichlet_integral([1.0], 3.7) == pytest.approx(math.log(3.7))
        assert CB.dirichlet_integral([1.0, 1.0], 1.0) == pytest.approx(math.log(0.5))
        assert CB.dirichlet_integral([0.5, 0.5], 1.0) == pytest.approx(math.log(math.pi))

    def test_against_nested_quadrature(self):
        a1, a2, s = 1.7, 2.3, 1.9
        val, _ = integrate.dblquad(lambda t2, t1: t1 ** (a1 - 1) * t2 ** (a2 - 1), 0, s, 0, lambda t1: s - t1)
        assert CB.dirichlet_integral([a1, a2], s) == pytest.approx(math.log(val), abs=1e-9)

    def test_pi_by_monte_carlo(self):
        est = CB.dirichlet_integral_mc([0.5, 0.5], 1.0, 10**6, np.random.default_rng(0))
        assert abs(est.value - math.pi) <= 3 * est.se

    def test_twenty_random_instances(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            k = int(rng.integers(1, 5))
            a = rng.uniform(0.3, 3.0, k)
            s = rng.uniform(0.5, 3.0)
            est = CB.dirichlet_integral_mc(a, s, 2 * 10**5, rng)
            assert abs(est.value - math.exp(CB.dirichlet_integral(a, s))) <= 3 * est.se

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            CB.dirichlet_integral([1.0, -1.0], 1.0)


class TestTruncatedLog:
    @pytest.mark.parametrize("delta", [0, 1])
    def test_p1_closed_forms(self, delta):
        s, lam = 10.0, 1e-3
        quad, _ = integrate.quad(lambda t: (1 + math.log(t / lam)) ** delta / t, lam, s, limit=200, points=[1e-2, 1e-1, 1])
        assert CB.truncated_log_dirichlet_exact_p1(s, lam, delta) == pytest.approx(quad, rel=1e-10)

    def test_p1_delta0_is_exact(self):
        est = CB.truncated_log_dirichlet_mc(1, 10.0, 1e-3, 0, 10**4, np.random.default_rng(2))
        assert est.value == pytest.approx(math.log(1e4), rel=1e-14)

    def test_p1_delta1_within_se(self):
        est = CB.truncated_log_dirichlet_mc(1, 10.0, 1e-3, 1, 10**5, np.random.default_rng(3))
        exact = CB.truncated_log_dirichlet_exact_p1(10.0, 1e-3, 1)
        assert abs(est.value - exact) <= max(3 * est.se, 1e-9 * exact)

    def test_p2_against_quadrature(self):
        s, lam = 2.0, 1e-2
        f = lambda t2, t1: (1 + math.log(t1 / lam)) * (1 + math.log(t2 / lam)) / (t1 * t2)
        val, _ = integrate.dblquad(f, lam, s - lam, lam, lambda t1: s - t1, epsabs=1e-10)
        est = CB.truncated_log_dirichlet_mc(2, s, lam, 1, 4 * 10**5, np.random.default_rng(4))
        assert abs(est.value - val) <= 3 * est.se

    def test_bound_check_reports_slack(self):
        est = CB.truncated_log_dirichlet_mc(3, 10.0, 1e-3, 0, 10**5, np.random.default_rng(5))
        lead = CB.truncated_log_bound(3, 10.0, 1e-3)
        slack = lead - est.log_value
        # the bound holds up to a correction of order p log|log x| / |log x|
        x = abs(math.log(3e-4))
        assert slack >= -3 * math.log(x) / x

    def test_rejects_large_lambda(self):
        with pytest.raises(ValueError):
            CB.truncated_log_dirichlet_mc(2, 1.0, 0.3, 0, 100, np.random.default_rng(6))
