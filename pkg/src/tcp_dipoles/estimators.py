"""Observables along sampler traces and the statistics built on them.

Everything here is a pure function of immutable inputs except the
free-energy drivers, which launch their own chains.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import sampler as S
from .configuration import SignedConfiguration, energy, fluctuation, get_test_function, nn_energy, tilde_energy
from .kernel import DipoleLaw, z_beta
from .nngraph import build_decomposition, dipole_records, nearest_neighbours

M0 = 36.0
COMPONENT_DENSITY_LIMIT = 3.0 * math.pi / (8.0 * math.pi + 3.0 * math.sqrt(3.0))
TI_NODES = 16
TI_BREAKS = (1.5, 2.0, 2.5)
DOMINANCE_SNAPSHOTS = 10


# --------------------------------------------------------------------------- small statistics helpers


def batch_means(x, batches=20):
    """Mean and batch-means standard error (falls back to the iid SE for short series)."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n == 0:
        return math.nan, math.nan
    if n == 1:
        return float(x[0]), math.nan
    b = min(batches, n)
    size = n // b
    if size < 2 or b < 2:
        return float(x.mean()), float(x.std(ddof=1) / math.sqrt(n))
    means = x[: b * size].reshape(b, size).mean(axis=1)
    return float(x.mean()), float(means.std(ddof=1) / math.sqrt(b))


@dataclass(frozen=True)
class Stationarity:
    third_quarter: float
    last_quarter: float
    se: float
    ok: bool


def stationarity(x, z=2.0, batches=10):
    """Last-quarter mean minus third-quarter mean, within ``z`` combined batch-means SEs."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 8:
        return Stationarity(math.nan, math.nan, math.nan, True)
    q3 = x[n // 2 : 3 * n // 4]
    q4 = x[3 * n // 4 :]
    m3, s3 = batch_means(q3, batches)
    m4, s4 = batch_means(q4, batches)
    se = math.hypot(s3, s4)
    diff = abs(m4 - m3)
    floor = 1e-12 * max(abs(m3), abs(m4))  # rounding of constant series
    ok = diff <= floor or (math.isfinite(se) and diff <= z * se + floor)
    return Stationarity(m3, m4, se, bool(ok))


def ks_statistic(sample, cdf):
    """Two-sided Kolmogorov-Smirnov distance between a sample and a vectorised CDF."""
    x = np.sort(np.asarray(sample, dtype=float))
    n = len(x)
    if n == 0:
        return math.nan
    f = np.clip(cdf(x), 0.0, 1.0)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))


# --------------------------------------------------------------------------- rates and predictions


def omega_lambda(beta, lam, m0=M0):
    """Error rate ``omega_lambda`` of the dipole-phase estimates (``beta >= 2``)."""
    if beta < 2:
        raise ValueError("omega_lambda is defined for beta >= 2")
    if not 0 < lam < 1:
        raise ValueError("need 0 < lambda < 1")
    ll = abs(math.log(lam))
    if beta == 2:
        return ll ** (-1.0 / (5.0 + m0))
    if beta < 4:
        return lam ** (2.0 * (beta - 2.0) / (12.0 - beta + m0))
    if beta == 4:
        return (lam * ll) ** (1.0 / (2.0 + m0))
    return lam ** (1.0 / (2.0 + m0))


def free_energy_prediction(n, beta, lam):
    """``2N log N + N((2-beta) log lambda 1{beta>2} + log|log lambda| 1{beta=2} + log Z_beta - 1)``.

    ``Z_2`` is taken as ``2 pi``; for ``beta < 2`` only ``2N log N`` is returned.
    """
    base = 2.0 * n * math.log(n)
    if beta < 2:
        return base
    if beta == 2:
        return base + n * (math.log(abs(math.log(lam))) + math.log(2.0 * math.pi) - 1.0)
    return base + n * ((2.0 - beta) * math.log(lam) + math.log(z_beta(beta)) - 1.0)


# --------------------------------------------------------------------------- traces


@dataclass
class ObservableTrace:
    """Per-snapshot observables of one chain."""

    n: int
    lam: float
    beta: float
    step: np.ndarray
    F: np.ndarray
    Fnn: np.ndarray
    Ftilde: np.ndarray
    K: np.ndarray
    n_pairs: np.ndarray
    n_dipoles: np.ndarray
    n_twice_isolated: np.ndarray
    lengths: list
    fluct: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.step)

    @property
    def dipole_fraction(self):
        return self.n_dipoles / self.n

    def pooled_lengths(self):
        return np.concatenate(self.lengths) if self.lengths else np.zeros(0)

    def tail(self, start):
        """Trace restricted to snapshots from index ``start`` on."""
        sl = slice(start, None)
        return ObservableTrace(
            self.n, self.lam, self.beta, self.step[sl], self.F[sl], self.Fnn[sl], self.Ftilde[sl], self.K[sl],
            self.n_pairs[sl], self.n_dipoles[sl], self.n_twice_isolated[sl], self.lengths[sl],
            {k: v[sl] for k, v in self.fluct.items()},
        )

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = sorted(self.fluct)
        w.writerow(["step", "F", "Fnn", "Ftilde", "K", "n_pairs", "n_dipoles", "n_twice_isolated"] + [f"fluct_{k}" for k in names])
        for r in range(len(self)):
            row = [int(self.step[r])] + [f"{v:.17g}" for v in (self.F[r], self.Fnn[r], self.Ftilde[r])]
            row += [int(self.K[r]), int(self.n_pairs[r]), int(self.n_dipoles[r]), int(self.n_twice_isolated[r])]
            row += [f"{self.fluct[k][r]:.17g}" for k in names]
            w.writerow(row)
        return buf.getvalue()

    def lengths_csv(self):
        buf = io.StringIO()
        buf.write("step,length\n")
        for st, ls in zip(self.step, self.lengths):
            for v in ls:
                buf.write(f"{int(st)},{v:.17g}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, trace_text, lengths_text, n, lam, beta):
        rows = list(csv.DictReader(io.StringIO(trace_text)))
        col = lambda k, t=float: np.array([t(r[k]) for r in rows])
        steps = col("step", int)
        by_step = {int(s): [] for s in steps}
        for r in csv.DictReader(io.StringIO(lengths_text)):
            by_step[int(r["step"])].append(float(r["length"]))
        fl = {k[6:]: col(k) for k in (rows[0].keys() if rows else []) if k.startswith("fluct_")}
        return cls(n, lam, beta, steps, col("F"), col("Fnn"), col("Ftilde"), col("K", int), col("n_pairs", int),
                   col("n_dipoles", int), col("n_twice_isolated", int), [np.array(by_step[int(s)]) for s in steps], fl)


def observe_configuration(cfg: SignedConfiguration, lam, test_functions=("bump",), energy_value=None):
    """Observables of a single configuration, as a dict."""
    dec = build_decomposition(cfg, lam)
    rec = dipole_records(cfg, dec)
    return {
        "F": energy(cfg, lam) if energy_value is None else energy_value,
        "Fnn": nn_energy(cfg, lam, dec),
        "Ftilde": tilde_energy(cfg, lam, dec),
        "K": dec.k_components,
        "n_pairs": dec.n_pairs,
        "n_dipoles": dec.n_dipoles,
        "n_twice_isolated": dec.n_twice_isolated,
        "lengths": rec["length"].copy(),
        "fluct": {get_test_function(t).name: fluctuation(cfg, t) for t in test_functions},
    }


def observe(snapshots, n, lam, beta, test_functions=("bump",)) -> ObservableTrace:
    """Decompose every snapshot (``sampler.Snapshot`` or configurations) into an :class:`ObservableTrace`."""
    recs, steps = [], []
    for k, snap in enumerate(snapshots):
        if isinstance(snap, SignedConfiguration):
            cfg, e, st = snap, None, k
        else:
            cfg, e, st = SignedConfiguration(snap.positions), snap.energy, snap.step
        recs.append(observe_configuration(cfg, lam, test_functions, e))
        steps.append(st)
    arr = lambda key, t=float: np.array([r[key] for r in recs], dtype=t)
    names = [get_test_function(t).name for t in test_functions]
    return ObservableTrace(
        n, float(lam), float(beta), np.array(steps, dtype=np.int64), arr("F"), arr("Fnn"), arr("Ftilde"),
        arr("K", np.int64), arr("n_pairs", np.int64), arr("n_dipoles", np.int64), arr("n_twice_isolated", np.int64),
        [r["lengths"] for r in recs], {nm: np.array([r["fluct"][nm] for r in recs]) for nm in names},
    )


# --------------------------------------------------------------------------- dipole statistics


def box_law(beta, lam, n):
    """Dipole-length law conditioned on the box diagonal ``sqrt(2N) / lambda``."""
    return DipoleLaw(beta, s_max=math.sqrt(2.0 * n) / lam)


@dataclass(frozen=True)
class DipoleSummary:
    fraction: float
    fraction_se: float
    ks: float
    n_lengths: int
    tail_threshold: float  # in units of lambda
    tail_fraction: float
    tail_se: float
    tail_predicted: float

    def to_dict(self):
        return dict(self.__dict__)


def dipole_statistics(trace: ObservableTrace, lam=None, beta=None, tail_threshold=2.0, law=None) -> DipoleSummary:
    """Dipole fraction, KS distance of rescaled lengths to the box-conditioned law, and a tail check."""
    lam = trace.lam if lam is None else lam
    beta = trace.beta if beta is None else beta
    frac, frac_se = batch_means(trace.dipole_fraction)
    s = trace.pooled_lengths() / lam
    law = law or box_law(beta, lam, trace.n)
    ks = ks_statistic(s, law.cdf) if len(s) else math.nan
    m = len(s)
    p_hat = float(np.mean(s >= tail_threshold)) if m else math.nan
    p_se = math.sqrt(max(p_hat * (1 - p_hat), 1.0 / m) / m) if m else math.nan
    return DipoleSummary(frac, frac_se, ks, m, tail_threshold, p_hat, p_se, float(law.survival(tail_threshold)))


def lengths_statistics(lengths_over_lambda, law, tail_threshold=2.0):
    """KS distance and tail exceedance for a bare sample of rescaled lengths."""
    s = np.asarray(lengths_over_lambda, dtype=float)
    m = len(s)
    p_hat = float(np.mean(s >= tail_threshold))
    return ks_statistic(s, law.cdf), p_hat, math.sqrt(max(p_hat * (1 - p_hat), 1.0 / m) / m), float(law.survival(tail_threshold))


# --------------------------------------------------------------------------- components at beta = 0


def count_components(points):
    """Number of connected components of the nearest-neighbour graph (one per two-cycle)."""
    pts = np.asarray(points, dtype=float)
    idx, _ = nearest_neighbours(pts, k=1)
    phi = idx[:, 0]
    return int(np.sum(phi[phi] == np.arange(len(phi)))) // 2


def component_density(n_points, draws, rng, return_se=False):
    """Monte Carlo ``E[K] / p`` for ``p`` iid uniform points in the unit square."""
    if n_points < 2:
        raise ValueError("need at least two points")
    ratios = np.array([count_components(rng.random((n_points, 2))) / n_points for _ in range(draws)])
    mean = float(ratios.mean())
    if return_se:
        return mean, float(ratios.std(ddof=1) / math.sqrt(draws)) if draws > 1 else math.nan
    return mean


# --------------------------------------------------------------------------- fluctuations and moments


@dataclass(frozen=True)
class FluctuationRow:
    lam: float
    omega: float
    mean_sq: float
    ratio: float
    ratio_se: float


@dataclass(frozen=True)
class FluctuationTable:
    rows: tuple
    constant: float
    bounded: bool

    def to_dict(self):
        return {"constant": self.constant, "bounded": self.bounded, "rows": [r.__dict__ for r in self.rows]}


def fluctuation_ratio(trace: ObservableTrace, xi0, omega=None):
    """Mean ``Fluct^2 / (N omega ||grad xi0||^2)`` and its batch-means SE."""
    tf = get_test_function(xi0)
    omega = omega_lambda(trace.beta, trace.lam) if omega is None else omega
    f2 = trace.fluct[tf.name] ** 2
    mean, se = batch_means(f2)
    denom = trace.n * omega * tf.grad_bound**2
    if denom == 0:
        return (0.0, 0.0) if mean == 0 else (math.inf, math.nan)
    return mean / denom, se / denom


def fluctuation_scaling(traces, xi0, constant) -> FluctuationTable:
    """Ratios per ``lambda`` and whether they all stay below ``constant``."""
    rows = []
    for tr in sorted(traces, key=lambda t: -t.lam):
        om = omega_lambda(tr.beta, tr.lam)
        ratio, se = fluctuation_ratio(tr, xi0, om)
        mean_sq = float(np.mean(tr.fluct[get_test_function(xi0).name] ** 2))
        rows.append(FluctuationRow(tr.lam, om, mean_sq, ratio, se))
    return FluctuationTable(tuple(rows), float(constant), all(r.ratio <= constant for r in rows))


@dataclass(frozen=True)
class MomentGap:
    value: float
    se: float
    dominant_snapshots: int


def moment_gap(trace: ObservableTrace, beta=None) -> MomentGap:
    """``(1/N) log mean exp(beta (F - Ftilde))`` with a leave-one-out jackknife SE.

    Warns when fewer than ten snapshots carry half of the exponential mass.
    """
    beta = trace.beta if beta is None else beta
    a = beta * (trace.F - trace.Ftilde)
    m = len(a)
    if m == 0:
        raise ValueError("empty trace")
    lse = special.logsumexp(a)
    value = (lse - math.log(m)) / trace.n
    w = np.sort(np.exp(a - lse))[::-1]
    dominant = int(np.searchsorted(np.cumsum(w), 0.5) + 1)
    if dominant < DOMINANCE_SNAPSHOTS:
        warnings.warn(f"exponential moment dominated by {dominant} snapshot(s)", RuntimeWarning, stacklevel=2)
    if m < 2:
        return MomentGap(float(value), math.nan, dominant)
    # leave-one-out log-sum-exp
    top = a.max()
    e = np.exp(a - top)
    rest = np.maximum(e.sum() - e, np.finfo(float).tiny)
    loo = (top + np.log(rest) - math.log(m - 1)) / trace.n
    se = math.sqrt((m - 1) / m * np.sum((loo - loo.mean()) ** 2))
    return MomentGap(float(value), float(se), dominant)


# --------------------------------------------------------------------------- free energy


def ti_nodes(beta, nodes=TI_NODES, breaks=TI_BREAKS):
    """Gauss-Legendre nodes and weights on ``[0, beta]``, panelled at ``breaks`` inside the interval."""
    if beta <= 0:
        return np.zeros(0), np.zeros(0)
    edges = [0.0] + [b for b in breaks if 0 < b < beta] + [float(beta)]
    panels = len(edges) - 1
    per = [nodes // panels] * panels
    for k in range(nodes - sum(per)):
        per[k % panels] += 1
    xs, ws = [], []
    for (lo, hi), k in zip(zip(edges[:-1], edges[1:]), per):
        x, w = np.polynomial.legendre.leggauss(k)
        xs.append(0.5 * (hi - lo) * x + 0.5 * (hi + lo))
        ws.append(0.5 * (hi - lo) * w)
    return np.concatenate(xs), np.concatenate(ws)


@dataclass
class FreeEnergyEstimate:
    n: int
    lam: float
    beta: float
    beta_grid: np.ndarray
    weights: np.ndarray
    mean_energy: np.ndarray
    energy_se: np.ndarray
    log_z: float
    log_z_se: float
    prediction: float
    omega: float | None
    converged: bool

    @property
    def reduced(self):
        """``(log Z - 2N log N) / N``."""
        return (self.log_z - 2.0 * self.n * math.log(self.n)) / self.n

    @property
    def reduced_error(self):
        """Reduced estimate minus the reduced prediction."""
        return self.reduced - (self.prediction - 2.0 * self.n * math.log(self.n)) / self.n

    def to_dict(self):
        return {
            "n": self.n, "lambda": self.lam, "beta": self.beta, "beta_grid": self.beta_grid.tolist(),
            "weights": self.weights.tolist(), "mean_energy": self.mean_energy.tolist(),
            "energy_se": self.energy_se.tolist(), "log_z": self.log_z, "log_z_se": self.log_z_se,
            "prediction": self.prediction, "omega": self.omega, "converged": self.converged,
            "reduced": self.reduced, "reduced_error": self.reduced_error,
        }


def _node_chain(n, lam, b, steps, burnin, stride, seed):
    rng = np.random.default_rng(seed)
    cfg = S.init_paired(rng, n, lam, b) if b >= 2 else S.init_uniform(rng, n)
    res = S.run(cfg, lam, b, S.Schedule(burnin=burnin, steps=steps, stride=stride, seed=seed))
    return np.array([s.energy for s in res.snapshots[1:]])


def free_energy_ti(n, beta, lam, steps=200_000, burnin=50_000, stride=500, seed=0, nodes=TI_NODES, breaks=TI_BREAKS,
                   node_energies=None) -> FreeEnergyEstimate:
    """``log Z(beta) = 2N log N - int_0^beta E_b[F] db`` with one chain per Gauss-Legendre node.

    ``node_energies`` may supply precomputed energy series (one per node)
    instead of running chains.
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    xs, ws = ti_nodes(beta, nodes, breaks)
    seeds = S.spawn_seeds(seed, len(xs))
    means, ses, ok = [], [], True
    for k, b in enumerate(xs):
        e = node_energies[k] if node_energies is not None else _node_chain(n, lam, float(b), steps, burnin, stride, seeds[k])
        m, se = batch_means(e)
        means.append(m)
        ses.append(se)
        ok &= stationarity(e, z=3.0).ok
    means, ses = np.array(means), np.array(ses)
    log_z = 2.0 * n * math.log(n) - float(np.sum(ws * means))
    log_z_se = float(math.sqrt(np.sum((ws * ses) ** 2))) if len(xs) else 0.0
    om = omega_lambda(beta, lam) if beta >= 2 else None
    return FreeEnergyEstimate(n, float(lam), float(beta), xs, ws, means, ses, log_z, log_z_se,
                              free_energy_prediction(n, beta, lam), om, bool(ok))


@dataclass(frozen=True)
class AISEstimate:
    log_z: float
    se: float
    chains: int


def free_energy_ais(n, beta, lam, temperatures=200, steps_per_temperature=50, chains=100, seed=0) -> AISEstimate:
    """Annealed importance sampling from iid uniform points (``beta = 0``) along a linear ``beta`` ladder.

    Independent cross-check of :func:`free_energy_ti`.  The resample move is
    disabled so that no per-temperature length law is needed.
    """
    ladder = np.linspace(0.0, beta, temperatures + 1)
    moves = S.MoveSpec((0.45, 0.25, 0.2, 0.0, 0.1))
    logw = np.empty(chains)
    for c, sd in enumerate(S.spawn_seeds(seed, chains)):
        rng = np.random.default_rng(sd)
        state = S.new_state(S.init_uniform(rng, n), lam, 0.0, moves=S.MoveSpec(**moves.__dict__), rng=rng)
        lw = 0.0
        for k in range(1, len(ladder)):
            lw -= (ladder[k] - ladder[k - 1]) * state.energy
            state.beta = float(ladder[k])
            S.advance(state, steps_per_temperature)
        logw[c] = lw
    top = logw.max()
    w = np.exp(logw - top)
    mean = w.mean()
    se_rel = w.std(ddof=1) / math.sqrt(chains) / mean
    return AISEstimate(float(2.0 * n * math.log(n) + top + math.log(mean)), float(se_rel), chains)


# --------------------------------------------------------------------------- summaries


def summarize(trace: ObservableTrace, xi0=("bump",), burn_fraction=0.0):
    """Everything ``analyze`` reports for one trace, as plain JSON-ready data."""
    tr = trace.tail(int(burn_fraction * len(trace)))
    out = {"n": tr.n, "lambda": tr.lam, "beta": tr.beta, "snapshots": len(tr)}
    fm, fse = batch_means(tr.dipole_fraction)
    out["dipole_fraction"] = {"mean": fm, "se": fse, "stationary": stationarity(tr.dipole_fraction).ok}
    out["K_over_N"] = dict(zip(("mean", "se"), batch_means(tr.K / tr.n)))
    out["energy"] = dict(zip(("mean", "se"), batch_means(tr.F)))
    invariant = bool(np.all((tr.n_dipoles <= tr.n_pairs) & (tr.n_pairs <= tr.K) & (tr.K <= tr.n)))
    out["invariants_hold"] = invariant
    if tr.beta > 0 and len(tr.pooled_lengths()) > 0:
        out["dipoles"] = dipole_statistics(tr).to_dict()
    if tr.beta >= 2:
        out["omega"] = omega_lambda(tr.beta, tr.lam)
        for x in xi0:
            r, se = fluctuation_ratio(tr, x)
            out.setdefault("fluctuation_ratio", {})[get_test_function(x).name] = {"mean": r, "se": se}
    if len(tr):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            g = moment_gap(tr)
        out["moment_gap"] = {"value": g.value, "se": g.se, "heavy_tail_warning": bool(caught)}
    return out
