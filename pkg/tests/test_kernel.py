import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from tcp_dipoles import kernel as K

# Reference values from scipy.integrate.dblquad over both discs in polar
# coordinates; they share no code with the radial panel quadrature.
G1_REFERENCE = {0.3: 0.2088145530300624, 1.0: -0.1106939982837465, 1.7: -0.5320987581302129}
OVERLAP_REFERENCE = [
    ((1.0, 0.5, 0.8), 0.12380215117329009),
    ((0.5, 1.0, 0.8), 0.12380215117348212),
    ((0.3, 0.7, 0.2), 0.7699402500612246),
]


@pytest.fixture(scope="module")
def kern():
    return K.default_kernel()


def test_kappa_oracle_polar_split():
    # circle-mean identity for log, split along the kink s = rho
    a, _ = integrate.dblquad(lambda rho, s: -np.log(s) * 4 * s * rho, 0, 1, 0, lambda s: s, epsabs=1e-14)
    b, _ = integrate.dblquad(lambda rho, s: -np.log(rho) * 4 * s * rho, 0, 1, lambda s: s, 1, epsabs=1e-14)
    assert a + b == pytest.approx(0.25, abs=1e-10)
    assert K.compute_kappa() == pytest.approx(0.25, abs=1e-8)


def test_disc_potential_examples():
    assert K.disc_potential(1.0, (3.0, 0.0)) == pytest.approx(-math.log(3.0), abs=1e-15)
    assert K.disc_potential(1.0, (0.0, 0.0)) == pytest.approx(0.5, abs=1e-15)
    assert K.disc_potential(0.5, (0.5, 0.0)) == pytest.approx(-math.log(0.5), abs=1e-15)


def test_disc_potential_centre_matches_2d_quadrature():
    v, _ = integrate.dblquad(lambda r, t: -np.log(r) * r / np.pi, 0, 2 * np.pi, 0, 1)
    assert K.disc_potential(1.0, (0.0, 0.0)) == pytest.approx(v, abs=1e-10)


def test_g_lambda_examples():
    assert K.g_lambda(0.1, (0.5, 0.0)) == -math.log(0.5)
    assert K.g_lambda(0.1, (0.0, 0.0)) == pytest.approx(-math.log(0.1) + 0.25, abs=1e-12)
    assert K.g_lambda(0.1, (0.2, 0.0)) == pytest.approx(-math.log(0.2), abs=1e-12)


def test_generalized_interaction_examples():
    assert K.generalized_disc_interaction(1.0, 1.0, 3.0) == -math.log(3.0)
    assert K.generalized_disc_interaction(1.0, 1.0, 0.0) == pytest.approx(0.25, abs=1e-12)
    assert K.generalized_disc_interaction(0.5, 1.5, (2.0, 0.0)) == -math.log(2.0)


@pytest.mark.parametrize("args,expected", OVERLAP_REFERENCE)
def test_generalized_interaction_against_cartesian_oracle(args, expected):
    assert K.generalized_disc_interaction(*args) == pytest.approx(expected, rel=1e-8, abs=1e-10)


@pytest.mark.parametrize("r", sorted(G1_REFERENCE))
def test_g1_exact_against_oracle(r):
    assert K.g1_exact(r)[0] == pytest.approx(G1_REFERENCE[r], abs=1e-9)


def test_kappa_consistency(kern):
    assert K.compute_kappa() == pytest.approx(K.generalized_disc_interaction(1, 1, 0), abs=1e-14)
    assert kern.g1(0.0) == pytest.approx(K.compute_kappa(), abs=1e-12)
    assert kern.kappa == pytest.approx(0.25, abs=1e-6)


def test_g1_continuity_and_monotonicity(kern):
    assert kern.g1(2.0) == pytest.approx(-math.log(2.0), abs=1e-6)
    assert kern.g1(2.0 - 1e-9) == pytest.approx(-math.log(2.0), abs=1e-6)
    r = np.linspace(0.0, 3.0, 30001)
    assert np.all(np.diff(kern.g1(r)) <= 1e-12)


def test_table_matches_direct_quadrature(kern):
    r = np.random.default_rng(1).uniform(0, 2, 300)
    assert np.max(np.abs(kern.g1(r) - K.g1_exact(r))) < 1e-6


def test_g1_quadratic_near_zero(kern):
    # g1 = kappa + O(r^2): no linear term
    r = np.array([1e-3, 2e-3, 4e-3])
    d = (K.g1_exact(r) - 0.25) / r**2
    assert np.ptp(d) < 1e-3


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 5.0), st.floats(0.01, 5.0), st.floats(1.0, 10.0))
def test_newton_branch_is_exact(a, b, stretch):
    r = (a + b) * stretch
    assert K.generalized_disc_interaction(a, b, r) == -math.log(r)


def test_scaling_invariance(kern):
    rng = np.random.default_rng(2)
    lam = 10 ** rng.uniform(-4, 0, 100)
    s = rng.uniform(0, 3, 100)
    for lam_k, s_k in zip(lam, s):
        assert kern.g_lambda_dist(lam_k, s_k * lam_k) + math.log(lam_k) == pytest.approx(kern.g1(s_k), abs=1e-9)


def test_bounded_distance_from_truncated_log(kern):
    # |g_lambda(z) - g(|z| v lambda)| <= C with the frozen C = 0.5
    lam = 0.01
    r = np.linspace(0.0, 5 * lam, 2001)
    gap = np.abs(kern.g_lambda_dist(lam, r) + np.log(np.maximum(r, lam)))
    assert gap.max() <= 0.5


def test_g_lambda_exact_beyond_contact(kern):
    rng = np.random.default_rng(3)
    lam = 10 ** rng.uniform(-4, -1, 10_000)
    r = lam * rng.uniform(2.0, 50.0, 10_000)
    for lam_k, r_k in zip(lam[:500], r[:500]):
        assert kern.g_lambda_dist(lam_k, r_k) == -np.log(r_k)


def test_jitted_and_numpy_agree(kern):
    r = np.linspace(0, 0.05, 777)
    vals = np.array([K.g_lambda_dist(x, 0.01, kern.coef, kern.table_spacing) for x in r])
    assert np.allclose(vals, kern.g_lambda_dist(0.01, r), rtol=0, atol=1e-13)


def test_bad_kappa_is_fatal(monkeypatch):
    monkeypatch.setattr(K, "compute_kappa", lambda: 0.26)
    with pytest.raises(K.KernelConfigurationError):
        K.SmearedKernel(spacing=0.05)


class TestZBeta:
    def test_rejects_beta_at_most_two(self):
        with pytest.raises(ValueError):
            K.z_beta(2.0)
        with pytest.raises(ValueError):
            K.z_beta(1.5)

    @pytest.mark.parametrize("beta", [3.0, 4.0, 10.0])
    def test_matches_adaptive_quadrature(self, beta):
        body, _ = integrate.quad(lambda r: math.exp(beta * K.g1_exact(r)[0]) * r, 0, 2, epsabs=1e-13, limit=200)
        tail, _ = integrate.quad(lambda r: r ** (1 - beta), 2, np.inf, epsabs=1e-13)
        assert K.z_beta(beta) == pytest.approx(2 * math.pi * (body + tail), rel=1e-6)
        assert K.z_beta(beta) > 0

    def test_tail_closed_form_beta4(self):
        body = 2 * math.pi * K._body_integral(4.0)
        assert K.z_beta(4.0) - body == pytest.approx(2 * math.pi * 0.125, abs=1e-12)

    def test_large_beta_asymptotics(self):
        # Z_beta ~ 2 pi e^{beta kappa} * Theta(1/beta): the product below stays bounded
        ratios = [K.z_beta(b) * math.exp(-b * 0.25) * b for b in (20.0, 40.0, 80.0)]
        assert max(ratios) / min(ratios) < 1.5


@pytest.fixture(scope="module")
def law4():
    return K.DipoleLaw(4.0)


class TestDipoleLaw:
    def test_normalisation_matches_z_beta(self, law4):
        assert law4.total == pytest.approx(K.z_beta(4.0), rel=1e-6)

    def test_cdf_basic(self, law4):
        assert law4.cdf(0.0) == 0.0
        assert law4.cdf(np.inf) == 1.0
        s = np.linspace(0, 20, 2001)
        assert np.all(np.diff(law4.cdf(s)) >= 0)

    def test_pareto_tail(self, law4):
        for s in (2.0, 3.0, 17.0):
            exact = 2 * math.pi / law4.total * s ** (2 - 4.0) / (4.0 - 2)
            assert law4.survival(s) == pytest.approx(exact, rel=1e-12)
            assert 1.0 - law4.cdf(s) == pytest.approx(exact, rel=1e-9)

    def test_match_point(self, law4):
        assert law4.ppf(law4.cdf(2.0)) == pytest.approx(2.0, abs=1e-9)

    def test_upper_tail_diverges(self, law4):
        u = 1 - np.array([1e-2, 1e-4, 1e-6])
        r = law4.ppf(u)
        assert np.all(np.diff(r) > 0)
        # P(r >= R) ~ R^-2
        assert law4.survival(r[1]) / law4.survival(r[2]) == pytest.approx(100, rel=1e-6)

    def test_roundtrip(self, law4):
        u = np.random.default_rng(4).random(5000)
        assert np.max(np.abs(law4.cdf(law4.ppf(u)) - u)) < 1e-7

    def test_pdf_integrates_to_one(self):
        law = K.DipoleLaw(3.0, s_max=50.0)
        edges = [0, 2, 50]
        tot = sum(integrate.quad(law.pdf, lo, hi, limit=200)[0] for lo, hi in zip(edges[:-1], edges[1:]))
        assert tot == pytest.approx(1.0, abs=1e-6)

    def test_truncated_law_below_two(self):
        law = K.DipoleLaw(1.0, s_max=100.0)
        assert law.cdf(100.0) == 1.0
        assert law.ppf(0.999999) <= 100.0
        with pytest.raises(ValueError):
            K.DipoleLaw(2.0)

    @pytest.mark.slow
    def test_sample_mean_beta4(self, law4):
        rng = np.random.default_rng(5)
        x = law4.sample(rng, 10**6)
        expected = law4.mean()
        # independent check of the mean: adaptive quadrature of s * density
        body, _ = integrate.quad(lambda s: s * law4.pdf(s), 0, 2, limit=200)
        tail = 2 * math.pi / law4.total * 2.0 ** (3 - 4.0) / (4.0 - 3)
        assert expected == pytest.approx(body + tail, rel=1e-6)
        se = x.std() / math.sqrt(x.size)
        assert abs(x.mean() - expected) < 3 * se
