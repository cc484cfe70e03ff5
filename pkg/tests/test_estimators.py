import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from tcp_dipoles import estimators as E
from tcp_dipoles import sampler as S
from tcp_dipoles.configuration import SignedConfiguration, energy, tilde_energy, uniform_configuration
from tcp_dipoles.kernel import DipoleLaw, z_beta


def trace_of(configs, lam, beta, names=("bump",)):
    return E.observe(configs, configs[0].n, lam, beta, names)


class TestOmega:
    @pytest.mark.parametrize("beta,expected", [(3.0, 0.7357), (2.0, 0.9540), (5.0, 0.8338)])
    def test_examples(self, beta, expected):
        assert E.omega_lambda(beta, 1e-3) == pytest.approx(expected, abs=1e-4)

    def test_exponent_at_three(self):
        assert E.omega_lambda(3.0, 1e-3) == pytest.approx(1e-3 ** (2 / 45), rel=1e-15)

    def test_beta_four(self):
        lam = 1e-3
        assert E.omega_lambda(4.0, lam) == pytest.approx((lam * abs(math.log(lam))) ** (1 / 38), rel=1e-15)

    def test_rejects(self):
        with pytest.raises(ValueError):
            E.omega_lambda(1.9, 1e-3)
        with pytest.raises(ValueError):
            E.omega_lambda(3.0, 1.0)

    @given(st.floats(2.0, 8.0), st.floats(1e-8, 0.3))
    def test_in_unit_interval(self, beta, lam):
        # just above beta = 2 the exponent underflows and omega rounds to 1
        assert 0 < E.omega_lambda(beta, lam) <= 1

    @given(st.floats(2.1, 8.0), st.floats(1e-8, 0.3))
    def test_strictly_below_one_away_from_two(self, beta, lam):
        assert E.omega_lambda(beta, lam) < 1


class TestFreeEnergy:
    def test_beta_zero_exact(self):
        est = E.free_energy_ti(7, 0.0, 1e-2)
        assert est.log_z == 2 * 7 * math.log(7)
        assert est.log_z_se == 0.0 and len(est.beta_grid) == 0

    def test_prediction(self):
        n, lam = 20, 1e-3
        expected = 2 * n * math.log(n) + n * (-math.log(lam) + math.log(z_beta(3.0)) - 1)
        assert E.free_energy_prediction(n, 3.0, lam) == pytest.approx(expected, rel=1e-14)
        at2 = 2 * n * math.log(n) + n * (math.log(abs(math.log(lam))) + math.log(2 * math.pi) - 1)
        assert E.free_energy_prediction(n, 2.0, lam) == pytest.approx(at2, rel=1e-14)

    @pytest.mark.parametrize("beta", [0.7, 2.0, 3.0, 4.5])
    def test_nodes(self, beta):
        x, w = E.ti_nodes(beta)
        assert len(x) == 16
        assert w.sum() == pytest.approx(beta, rel=1e-14)
        assert np.all((x > 0) & (x < beta)) and np.all(np.diff(x) > 0)
        # polynomial exactness on each panel
        assert np.sum(w * x**5) == pytest.approx(beta**6 / 6, rel=1e-12)

    def test_panels_pack_nodes_near_two(self):
        x, _ = E.ti_nodes(3.0)
        assert np.sum(np.abs(x - 2.0) < 0.5) == 8

    def test_quadrature_of_supplied_energies(self):
        n, beta = 5, 3.0
        x, _ = E.ti_nodes(beta)
        series = [np.full(50, -2.0 * b) for b in x]  # E[F] = -2 b  ->  log Z = 2N log N + b^2
        est = E.free_energy_ti(n, beta, 1e-2, node_energies=series)
        assert est.log_z == pytest.approx(2 * n * math.log(n) + beta**2, rel=1e-13)
        assert est.converged

    def test_drifting_node_flags_unconverged(self):
        x, _ = E.ti_nodes(1.0)
        series = [np.linspace(0, 10, 400) + 0.01 * np.sin(np.arange(400)) for _ in x]
        assert not E.free_energy_ti(3, 1.0, 1e-2, node_energies=series).converged

    @pytest.mark.slow
    def test_ti_matches_ais(self):
        n, beta, lam = 20, 1.0, 0.1
        ti = E.free_energy_ti(n, beta, lam, steps=100_000, burnin=20_000, stride=250, seed=3)
        ais = E.free_energy_ais(n, beta, lam, temperatures=100, steps_per_temperature=40, chains=100, seed=4)
        se = math.hypot(ti.log_z_se, ais.se)
        assert abs(ti.log_z - ais.log_z) <= 3 * se


class TestDipoleStatistics:
    def test_perfect_dipoles_ks(self):
        law = DipoleLaw(3.0)
        s = law.sample(np.random.default_rng(0), 10**5)
        ks, *_ = E.lengths_statistics(s, law)
        assert ks <= 0.01

    def test_ks_shrinks_with_sample(self):
        law = DipoleLaw(3.5)
        rng = np.random.default_rng(1)
        small = np.mean([E.lengths_statistics(law.sample(rng, 500), law)[0] for _ in range(10)])
        large = np.mean([E.lengths_statistics(law.sample(rng, 50_000), law)[0] for _ in range(10)])
        assert large < small / 5

    def test_beta_four_tail(self):
        law = DipoleLaw(4.0)
        s = law.sample(np.random.default_rng(2), 10**5)
        _, p_hat, se, p = E.lengths_statistics(s, law, 2.0)
        assert p == pytest.approx(2 * math.pi / z_beta(4.0) * 2.0**-2 / 2, rel=1e-12)
        assert abs(p_hat - p) <= 3 * se

    def test_same_sign_config_has_no_dipoles(self):
        # the two positives are close together, the two negatives far apart
        pos = np.array([[0.2, 0.2], [0.21, 0.2], [1.2, 1.2], [1.2, 0.3]])
        tr = trace_of([SignedConfiguration(pos)], 0.01, 3.0)
        assert tr.n_dipoles[0] == 0
        assert E.dipole_statistics(tr).fraction == 0.0

    def test_ks_matches_scipy(self):
        law = DipoleLaw(3.0)
        s = law.sample(np.random.default_rng(3), 2000)
        assert E.ks_statistic(s, law.cdf) == pytest.approx(stats.kstest(s, law.cdf).statistic, abs=1e-12)

    def test_box_law_conditions(self):
        law = E.box_law(3.0, 1e-3, 50)
        assert law.s_max == pytest.approx(10_000)
        assert law.cdf(10_000.0) == 1.0


class TestComponentDensity:
    def test_two_points(self):
        assert E.component_density(2, 5, np.random.default_rng(0)) == 0.5

    def test_count_components_examples(self):
        pts = np.array([[0, 0], [1, 0], [5, 0], [6.1, 0], [7.5, 0]], dtype=float)
        assert E.count_components(pts) == 2

    @pytest.mark.slow
    def test_limit_constant(self):
        val, se = E.component_density(2000, 200, np.random.default_rng(1), return_se=True)
        assert abs(val - E.COMPONENT_DENSITY_LIMIT) <= 0.005
        assert abs(val - 0.3107) / 0.3107 <= 0.02

    def test_trend_towards_limit(self):
        rng = np.random.default_rng(2)
        small, s_se = E.component_density(50, 2000, rng, return_se=True)
        large, l_se = E.component_density(1000, 100, rng, return_se=True)
        assert small - large > -3 * math.hypot(s_se, l_se)
        assert abs(large - E.COMPONENT_DENSITY_LIMIT) < abs(small - E.COMPONENT_DENSITY_LIMIT) + 3 * s_se


class TestFluctuations:
    def test_constant_test_function(self):
        rng = np.random.default_rng(4)
        cfgs = [S.init_paired(rng, 10, 1e-2, 3.0) for _ in range(5)]
        trs = [E.observe(cfgs, 10, lam, 3.0, ("plateau",)) for lam in (1e-2, 1e-3)]
        tab = E.fluctuation_scaling(trs, "plateau", constant=1.0)
        assert all(r.ratio == 0.0 for r in tab.rows) and tab.bounded

    def test_iid_uniform_baseline(self):
        rng = np.random.default_rng(5)
        n = 40
        cfgs = [uniform_configuration(n, rng) for _ in range(400)]
        tr = E.observe(cfgs, n, 1e-2, 0.0, ("bump",))
        f2 = np.mean(tr.fluct["bump"] ** 2) / n
        # iid points: E[Fluct^2] = 2 N Var(xi) <= 2 N sup|xi|^2
        assert f2 <= 2.0
        assert f2 > 0.0

    def test_ratio_definition(self):
        rng = np.random.default_rng(6)
        cfgs = [S.init_paired(rng, 10, 1e-2, 3.0) for _ in range(20)]
        tr = E.observe(cfgs, 10, 1e-2, 3.0, ("cone",))
        r, _ = E.fluctuation_ratio(tr, "cone")
        assert r == pytest.approx(np.mean(tr.fluct["cone"] ** 2) / (10 * E.omega_lambda(3.0, 1e-2)), rel=1e-12)


def far_dipoles(sep, d=1e-3):
    x = np.array([[0.5, 0.5], [0.5 + sep, 0.5]])
    y = x + [d, 0.0]
    return SignedConfiguration.from_pairs(x, y, check_box=False)


class TestMomentGap:
    def test_single_snapshot(self):
        cfg = S.init_paired(np.random.default_rng(7), 8, 1e-2, 3.0)
        tr = trace_of([cfg], 1e-2, 3.0)
        with pytest.warns(RuntimeWarning):
            g = E.moment_gap(tr)
        expected = 3.0 * (energy(cfg, 1e-2) - tilde_energy(cfg, 1e-2)) / 8
        assert g.value == pytest.approx(expected, rel=1e-12, abs=1e-15)

    def test_far_dipoles_gap_vanishes(self):
        gaps = []
        for sep in (0.01, 0.1, 1.0, 10.0):
            tr = E.observe([far_dipoles(sep)], 2, 1e-4, 3.0)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                gaps.append(abs(E.moment_gap(tr).value))
        assert all(a > b for a, b in zip(gaps, gaps[1:]))
        assert gaps[-1] < 1e-6

    def test_jackknife_against_direct(self):
        rng = np.random.default_rng(8)
        cfgs = [S.init_paired(rng, 6, 1e-2, 3.0) for _ in range(30)]
        tr = trace_of(cfgs, 1e-2, 3.0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            g = E.moment_gap(tr)
            loo = [E.moment_gap(tr.tail(0).__class__(**{**tr.__dict__, **_drop(tr, i)})).value for i in range(len(tr))]
        se = math.sqrt((len(loo) - 1) / len(loo) * np.sum((np.array(loo) - np.mean(loo)) ** 2))
        assert g.se == pytest.approx(se, rel=1e-8)


def _drop(tr, i):
    keep = np.arange(len(tr)) != i
    return {
        "step": tr.step[keep], "F": tr.F[keep], "Fnn": tr.Fnn[keep], "Ftilde": tr.Ftilde[keep], "K": tr.K[keep],
        "n_pairs": tr.n_pairs[keep], "n_dipoles": tr.n_dipoles[keep], "n_twice_isolated": tr.n_twice_isolated[keep],
        "lengths": [l for l, k in zip(tr.lengths, keep) if k], "fluct": {k: v[keep] for k, v in tr.fluct.items()},
    }


class TestTrace:
    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_invariants(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 15))
        cfgs = [uniform_configuration(n, rng), S.init_paired(rng, n, 1e-2, 3.0)]
        tr = E.observe(cfgs, n, 1e-2, 3.0)
        assert np.all(tr.n_dipoles <= tr.n_pairs) and np.all(tr.n_pairs <= tr.K) and np.all(tr.K <= tr.n)
        assert np.all(tr.pooled_lengths() >= 0)
        assert all(len(l) == d for l, d in zip(tr.lengths, tr.n_dipoles))

    def test_csv_round_trip(self):
        rng = np.random.default_rng(9)
        cfg = S.init_paired(rng, 6, 1e-2, 3.0)
        res = S.run(cfg, 1e-2, 3.0, S.Schedule(burnin=100, steps=3000, stride=1000, seed=1))
        tr = E.observe(res.snapshots, 6, 1e-2, 3.0, ("bump", "cone"))
        text = tr.to_csv()
        assert text.splitlines()[0] == "step,F,Fnn,Ftilde,K,n_pairs,n_dipoles,n_twice_isolated,fluct_bump,fluct_cone"
        back = E.ObservableTrace.from_csv(text, tr.lengths_csv(), 6, 1e-2, 3.0)
        for name in ("step", "F", "Fnn", "Ftilde", "K", "n_pairs", "n_dipoles", "n_twice_isolated"):
            assert np.array_equal(getattr(back, name), getattr(tr, name))
        assert np.array_equal(back.fluct["cone"], tr.fluct["cone"])
        assert np.array_equal(back.pooled_lengths(), tr.pooled_lengths())

    def test_snapshot_energy_is_cache(self):
        rng = np.random.default_rng(10)
        cfg = S.init_paired(rng, 5, 1e-2, 3.0)
        res = S.run(cfg, 1e-2, 3.0, S.Schedule(steps=2000, stride=1000, seed=2))
        tr = E.observe(res.snapshots, 5, 1e-2, 3.0)
        for s, f in zip(res.snapshots, tr.F):
            assert f == s.energy
            assert f == pytest.approx(energy(SignedConfiguration(s.positions), 1e-2), abs=1e-8)

    def test_summary_keys(self):
        rng = np.random.default_rng(11)
        cfg = S.init_paired(rng, 8, 1e-2, 3.0)
        res = S.run(cfg, 1e-2, 3.0, S.Schedule(burnin=1000, steps=20_000, stride=500, seed=2))
        out = E.summarize(E.observe(res.snapshots, 8, 1e-2, 3.0))
        assert out["invariants_hold"]
        assert {"dipole_fraction", "dipoles", "omega", "moment_gap", "fluctuation_ratio"} <= set(out)
        assert 0 <= out["dipoles"]["ks"] <= 1


class TestStatHelpers:
    def test_stationarity(self):
        rng = np.random.default_rng(12)
        assert E.stationarity(rng.normal(size=4000)).ok
        assert not E.stationarity(np.linspace(0, 1, 4000) + 0.01 * rng.normal(size=4000)).ok

    def test_batch_means_iid(self):
        rng = np.random.default_rng(13)
        x = rng.normal(size=20_000)
        m, se = E.batch_means(x)
        assert se == pytest.approx(1 / math.sqrt(20_000), rel=0.4)
