"""Identity and bound suites shared by ``tcp-dipoles verify`` and the acceptance tests.

Each suite returns a :class:`SuiteResult`; ``passed`` compares the measured
quantity with the stated tolerance and nothing else.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import bounds as B
from . import combinatorics as CB
from .configuration import energy, uniform_configuration
from .kernel import KAPPA, compute_kappa, default_kernel, g_lambda
from .nngraph import build_decomposition


@dataclass
class SuiteResult:
    name: str
    passed: bool
    summary: str
    details: dict = field(default_factory=dict)

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.summary}"

    def to_dict(self):
        return {"name": self.name, "passed": self.passed, "summary": self.summary, "details": self.details}


def kernel_suite(rng, pairs=10_000) -> SuiteResult:
    """kappa by quadrature, exact logarithm beyond contact, continuity of ``g1`` at 2."""
    kappa = compute_kappa()
    k = default_kernel()
    lam = 10 ** rng.uniform(-4, -1, pairs)
    r = 2 * lam * (1 + rng.exponential(3.0, pairs))
    theta = rng.uniform(0, 2 * math.pi, pairs)
    z = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    mismatches = sum(g_lambda(l, zz) != -np.log(np.sqrt(np.sum(zz * zz))) for l, zz in zip(lam, z))
    below = float(k.g1(2.0 - 1e-9))
    jump = abs(below + math.log(2.0))
    ok = abs(kappa - KAPPA) <= 1e-6 and mismatches == 0 and jump <= 1e-6
    return SuiteResult("kernel", ok, f"kappa={kappa:.9f} far-field mismatches={mismatches} jump at 2={jump:.2e}",
                       {"kappa": kappa, "mismatches": int(mismatches), "jump": jump})


def electric_suite(rng, instances=20, tol=0.01, lam_range=(0.05, 0.3)) -> SuiteResult:
    """Grid field energy rewriting against the pairwise energy, relative to ``|F|``."""
    errs = []
    while len(errs) < instances:
        n = int(rng.integers(1, 4))
        lam = float(rng.uniform(*lam_range))
        cfg = uniform_configuration(n, rng)
        f = energy(cfg, lam)
        try:
            e = B.electric_energy(cfg, lam)
        except B.GridResolutionError:
            continue
        errs.append(abs(e - f) / abs(f))
    worst = max(errs)
    return SuiteResult("electric-rewriting", worst <= tol, f"worst relative error {worst:.2e} over {instances} configs (tol {tol})",
                       {"relative_errors": errs})


def ball_growth_suite(rng, instances=20, tol=0.02, lam_range=(0.05, 0.2), gamma=0.5) -> SuiteResult:
    """Growing every disc from ``lambda`` to its clamped ``tau`` radius: grid LHS against exact RHS."""
    errs = []
    while len(errs) < instances:
        n = int(rng.integers(1, 4))
        lam = float(rng.uniform(*lam_range))
        cfg = uniform_configuration(n, rng)
        dec = build_decomposition(cfg, lam)
        a = B.RadiiVector.all_lambda(2 * n, lam)
        t = B.RadiiVector.clamped(dec, gamma)
        if np.array_equal(a.values, t.values):
            continue
        try:
            rep = B.ball_growth_identity(cfg, a, t)
        except B.GridResolutionError:
            continue
        errs.append(rep.extra["relative_error"])
    worst = max(errs)
    return SuiteResult("ball-growth", worst <= tol, f"worst relative error {worst:.2e} over {instances} instances (tol {tol})",
                       {"relative_errors": errs})


def counting_suite(p_max=6) -> SuiteResult:
    bad = []
    for p in range(2, p_max + 1):
        enum = CB.enumerate_nn_graphs(p).counts()
        formula = {k: CB.count_nn_graphs(p, k).count for k in range(1, p // 2 + 1)}
        if enum != formula:
            bad.append(p)
    spots = {(3, 1): 6, (4, 2): 3, (4, 1): 48}
    spot_bad = [pk for pk, v in spots.items() if CB.count_nn_graphs(*pk).count != v]
    ok = not bad and not spot_bad
    return SuiteResult("graph-counting", ok, f"formula vs enumeration mismatches at p={bad}, spot mismatches={spot_bad}",
                       {"p_max": p_max})


def dirichlet_suite(rng, instances=20, samples=200_000) -> SuiteResult:
    zs = []
    for _ in range(instances):
        k = int(rng.integers(1, 5))
        a = rng.uniform(0.3, 3.0, k)
        s = float(rng.uniform(0.5, 3.0))
        est = CB.dirichlet_integral_mc(a, s, samples, rng)
        zs.append(abs(est.value - math.exp(CB.dirichlet_integral(a, s))) / est.se)
    exact = []
    for delta in (0, 1):
        for s, lam in ((10.0, 1e-3), (2.0, 1e-2)):
            closed = CB.truncated_log_dirichlet_exact_p1(s, lam, delta)
            est = CB.truncated_log_dirichlet_mc(1, s, lam, delta, 10_000, rng)
            # delta = 0 has a constant weight, delta = 1 is checked against the SE
            exact.append(est.value == closed if delta == 0 else abs(est.value - closed) <= 3 * est.se)
    worst = max(zs)
    ok = worst <= 3 and all(exact)
    return SuiteResult("dirichlet", ok, f"worst |MC - closed| / SE = {worst:.2f} over {instances}; p=1 closed forms ok={all(exact)}",
                       {"z_scores": zs})


def bounds_suite(rng, train=10_000, test=10_000, n_max=20, kinds=("prop21", "cor22", "pairing")) -> SuiteResult:
    results = {}
    for kind in kinds:
        tr = B.make_instances(kind, train, rng, n_max)
        te = B.make_instances(kind, test, rng, n_max)
        results[kind] = B.calibrate_and_test(kind, tr, te)
    ok = all(r.passed for r in results.values())
    summary = ", ".join(f"{k}: C={r.constant:.3g} violations={r.violations}" for k, r in results.items())
    return SuiteResult("bounds", ok, summary, {k: r.to_dict() for k, r in results.items()})


SUITES = ("kernel", "electric", "ball-growth", "counting", "dirichlet", "bounds")


def run_suite(name, rng, size=None) -> SuiteResult:
    """Dispatch by name; ``size`` scales the instance counts (``None`` keeps the defaults)."""
    if name == "kernel":
        return kernel_suite(rng, size or 10_000)
    if name == "electric":
        return electric_suite(rng, size or 20)
    if name == "ball-growth":
        return ball_growth_suite(rng, size or 20)
    if name == "counting":
        return counting_suite()
    if name == "dirichlet":
        return dirichlet_suite(rng, size or 20)
    if name == "bounds":
        return bounds_suite(rng, size or 10_000, size or 10_000)
    raise ValueError(f"unknown suite {name!r}")
