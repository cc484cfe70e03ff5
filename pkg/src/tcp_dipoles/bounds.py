"""Electrostatic identities and energy bounds, evaluated numerically.

The field energy ``int |grad h_alpha|^2`` of disc-smeared charges is computed
on a uniform grid from the analytic gradient of each disc potential

    grad phi_a(x) = -x / a^2      (|x| < a)
                  = -x / |x|^2    (|x| >= a)

which is continuous, so the midpoint rule converges at second order.  The
contribution outside the padded window is modelled by the field of a point
dipole, whose squared gradient ``|p|^2 / r^4`` integrates to
``|p|^2 (pi/2 + 1) / W^2`` outside a square of half-width ``W``.

The nearest-neighbour lower bounds and the pairing upper bound contain an
unspecified universal constant ``C``.  Each bound is written as
``A - C * B`` with ``B >= 0`` so the smallest admissible ``C`` of a single
instance is ``max(0, (A - F) / B)``; calibration takes the maximum over a
training set.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

from .configuration import SignedConfiguration, energy, nn_energy
from .kernel import KAPPA, default_kernel, disc_potential, generalized_disc_interaction
from .nngraph import GraphDecomposition, build_decomposition, r_half

PADDING_FACTOR = 8.0
RESOLUTION_FACTOR = 8.0
MAX_GRID_SIDE = 4096
_SQUARE_TAIL = math.pi / 2.0 + 1.0
BOUND_TOLERANCE = 1e-9


class GridResolutionError(ValueError):
    pass


def _g(r):
    return -np.log(r)


# --------------------------------------------------------------------------- radii


@dataclass(frozen=True)
class RadiiVector:
    """Per-charge disc radii with the name of the preset that produced them."""

    values: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if np.any(~(v > 0)):
            raise ValueError("radii must be positive")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)

    @classmethod
    def all_lambda(cls, size, lam):
        return cls(np.full(size, float(lam)), "all-lambda")

    @classmethod
    def tau(cls, dec: GraphDecomposition):
        """``r2(i) ^ r2(phi1(i))`` on 2-cycles, ``r2(i)`` elsewhere."""
        r2 = dec.r2
        v = np.where(dec.in_two_cycle, np.minimum(r2, r2[dec.phi1]), r2)
        return cls(v, "tau")

    @classmethod
    def clamped(cls, dec: GraphDecomposition, gamma):
        """``(tau_i ^ gamma) v r1(i)``."""
        v = np.maximum(np.minimum(cls.tau(dec).values, gamma), dec.r1)
        return cls(v, "clamped-gamma")


def _radii(radii, size):
    v = radii.values if isinstance(radii, RadiiVector) else np.asarray(radii, dtype=float)
    if v.shape != (size,):
        raise ValueError("one radius per charge is required")
    if np.any(~np.isfinite(v)) or np.any(v <= 0):
        raise ValueError("radii must be finite and positive")
    return v


@dataclass
class BoundReport:
    lhs: float
    rhs: float
    gap: float
    constant_used: float
    violated: bool
    extra: dict = field(default_factory=dict)

    @classmethod
    def make(cls, lhs, rhs, constant, tol=BOUND_TOLERANCE, **extra):
        gap = float(lhs - rhs)
        return cls(float(lhs), float(rhs), gap, float(constant), gap < -tol, extra)

    def to_dict(self):
        return asdict(self)


# --------------------------------------------------------------------------- electric potential and field energy


def electric_potential(config: SignedConfiguration, radii, point) -> float:
    """``sum_i d_i phi_{alpha_i}(point - z_i)``."""
    a = _radii(radii, 2 * config.n)
    p = np.asarray(point, dtype=float)
    return float(sum(q * disc_potential(ai, p - z) for q, ai, z in zip(config.charges, a, config.positions)))


@numba.njit(cache=True)
def _grid_sum(z, q, a, x0, y0, h, nx, ny):
    total = 0.0
    for ix in range(nx):
        px = x0 + (ix + 0.5) * h
        col = 0.0
        for iy in range(ny):
            py = y0 + (iy + 0.5) * h
            gx = 0.0
            gy = 0.0
            for k in range(z.shape[0]):
                dx = px - z[k, 0]
                dy = py - z[k, 1]
                r2 = dx * dx + dy * dy
                ak = a[k]
                s = ak * ak if r2 < ak * ak else r2
                gx -= q[k] * dx / s
                gy -= q[k] * dy / s
            col += gx * gx + gy * gy
        total += col
    return total * h * h


@dataclass(frozen=True)
class GridEnergy:
    value: float
    window_part: float
    tail_part: float
    spacing: float
    cells: int


def grid_field_energy(
    config: SignedConfiguration,
    radii,
    padding=PADDING_FACTOR,
    resolution=None,
    max_side=MAX_GRID_SIDE,
    details=False,
):
    """``int_{R^2} |grad h_alpha|^2`` by the midpoint rule plus a dipole tail.

    Parameters
    ----------
    padding : float
        The window is the bounding box of all discs grown by ``padding``
        times the configuration diameter on every side.
    resolution : float, optional
        Grid spacing; defaults to ``min(alpha) / 8``.  Spacings that do not
        resolve ``min(alpha) / 4`` are refused, as are grids wider than
        ``max_side`` cells.
    """
    z = config.positions
    q = config.charges
    if abs(q.sum()) > 0:
        raise ValueError("the configuration must be neutral")
    a = _radii(radii, len(z))
    amin = float(a.min())
    h = amin / RESOLUTION_FACTOR if resolution is None else float(resolution)
    if h > amin / 4.0:
        raise GridResolutionError(f"spacing {h:g} does not resolve min radius / 4 = {amin / 4:g}")
    lo = np.min(z - a[:, None], axis=0)
    hi = np.max(z + a[:, None], axis=0)
    diam = float(np.max(hi - lo))
    lo = lo - padding * diam
    hi = hi + padding * diam
    centre = 0.5 * (lo + hi)
    half = 0.5 * float(np.max(hi - lo))
    n_side = int(math.ceil(2.0 * half / h))
    if n_side > max_side:
        raise GridResolutionError(f"grid of {n_side}^2 cells exceeds the cap of {max_side}^2")
    half = 0.5 * n_side * h
    x0, y0 = centre - half
    inside = _grid_sum(z, q.astype(np.float64), a, x0, y0, h, n_side, n_side)
    p = np.sum(q[:, None] * z, axis=0)
    tail = float(p @ p) * _SQUARE_TAIL / half**2
    out = GridEnergy(inside + tail, inside, tail, h, n_side * n_side)
    return out if details else out.value


def electric_energy(config: SignedConfiguration, lam: float, **grid_kw) -> float:
    """``F_lambda`` from the field: ``int |grad h|^2 / (4 pi) - N (g(lambda) + kappa)``."""
    e = grid_field_energy(config, RadiiVector.all_lambda(2 * config.n, lam), **grid_kw)
    return e / (4.0 * math.pi) - config.n * (-math.log(lam) + KAPPA)


def exact_field_energy(config: SignedConfiguration, radii) -> float:
    """``2 pi sum_{i,j} d_i d_j G(alpha_i, alpha_j, z_i - z_j)`` from the disc interactions."""
    z, q = config.positions, config.charges
    a = _radii(radii, len(z))
    tot = 0.0
    for i in range(len(z)):
        for j in range(len(z)):
            tot += q[i] * q[j] * generalized_disc_interaction(a[i], a[j], z[i] - z[j])
    return 2.0 * math.pi * tot


def ball_growth_terms(config: SignedConfiguration, radii_from, radii_to):
    """Matrix of ``d_i d_j [G(t_i,t_j) + G(t_i,a_j) - G(a_i,t_j) - G(a_i,a_j)]``."""
    z, q = config.positions, config.charges
    a = _radii(radii_from, len(z))
    t = _radii(radii_to, len(z))
    m = len(z)
    out = np.zeros((m, m))
    G = generalized_disc_interaction
    for i in range(m):
        for j in range(m):
            r = z[i] - z[j]
            out[i, j] = q[i] * q[j] * (G(t[i], t[j], r) + G(t[i], a[j], r) - G(a[i], t[j], r) - G(a[i], a[j], r))
    return out


def ball_growth_identity(config: SignedConfiguration, radii_from, radii_to, **grid_kw) -> BoundReport:
    """Compare ``(int|grad h_tau|^2 - int|grad h_alpha|^2) / 2 pi`` (grid) with the disc-interaction sum.

    ``gap`` holds ``lhs - rhs`` and ``extra['relative_error']`` holds
    ``|lhs - rhs| / |rhs|`` (``0`` when both vanish).
    """
    m = 2 * config.n
    a = _radii(radii_from, m)
    t = _radii(radii_to, m)
    rhs = float(ball_growth_terms(config, a, t).sum())
    if np.array_equal(a, t):
        lhs = 0.0
    else:
        res = min(a.min(), t.min()) / RESOLUTION_FACTOR
        grid_kw.setdefault("resolution", res)
        e_t = grid_field_energy(config, t, **grid_kw)
        e_a = grid_field_energy(config, a, **grid_kw)
        lhs = (e_t - e_a) / (2.0 * math.pi)
    rel = abs(lhs - rhs) / abs(rhs) if rhs != 0 else (0.0 if lhs == 0 else math.inf)
    return BoundReport.make(lhs, rhs, math.nan, tol=math.inf, relative_error=rel)


# --------------------------------------------------------------------------- nearest-neighbour lower bounds


def _dec(config, lam, decomposition):
    return decomposition if decomposition is not None else build_decomposition(config, lam)


def _safe_ratio_sq(r1, r2):
    # 1/r2 = 0 for the infinite second-neighbour sentinel
    return np.where(np.isfinite(r2), (r1 / np.where(np.isfinite(r2), r2, 1.0)) ** 2, 0.0)


def cor22_parts(config, lam, decomposition=None, kernel=None):
    """``(A, B)`` with the corollary's right-hand side equal to ``A - C B``."""
    dec = _dec(config, lam, decomposition)
    phi1, phi2 = dec.phi1, dec.phi2
    a = nn_energy(config, lam, dec, kernel)
    if dec.size > 2:
        twice_pair = dec.in_pair & dec.in_pair[phi2] & dec.in_pair[phi2[phi1]]
    else:
        twice_pair = np.zeros(dec.size, dtype=bool)
    charged = twice_pair & ~dec.in_dip
    neutral = twice_pair & dec.in_dip
    rmin = np.minimum(dec.r2, dec.r2[phi1])
    a += float(np.sum(np.log(rmin[charged] / dec.r1[charged])))
    b = float(charged.sum()) + float(np.sum(_safe_ratio_sq(dec.r1, dec.r2)[neutral])) + (config.n - dec.k_components)
    return a, b


def nn_lower_bound_rhs(config, lam, decomposition=None, C=1.0, kernel=None) -> float:
    """Right-hand side of the nearest-neighbour lower bound for a given constant ``C``."""
    a, b = cor22_parts(config, lam, decomposition, kernel)
    return a - C * b


def prop21_parts(config, lam, decomposition=None, kernel=None):
    """``(A, B)`` for the finer per-component lower bound ``A - C B``."""
    dec = _dec(config, lam, decomposition)
    k = kernel or default_kernel()
    z, q = config.positions, dec.charges
    phi1 = dec.phi1
    cyc = dec.in_two_cycle
    gl = k.g_lambda_dist(lam, np.linalg.norm(z - z[phi1], axis=1))
    rmin = np.minimum(dec.r2, dec.r2[phi1])
    with np.errstate(divide="ignore", invalid="ignore"):
        g_rmin = _g(rmin)
        g_r2 = _g(dec.r2)
        dD = q * dec.d_sums
        # d_i D_i vanishes on neutral cycles; avoid 0 * inf there
        excess = np.where(dD != 0, dD * (g_rmin + KAPPA), 0.0)
    cyc_terms = q * q[phi1] * gl - excess
    a = 0.5 * (np.sum(cyc_terms[cyc]) - np.sum((g_r2 + KAPPA)[~cyc]))
    b = 0.5 * float(np.sum(_safe_ratio_sq(dec.r1, dec.r2)[cyc]))
    return float(a), b


def prop21_rhs(config, lam, decomposition=None, C=1.0, kernel=None) -> float:
    a, b = prop21_parts(config, lam, decomposition, kernel)
    return a - C * b


# --------------------------------------------------------------------------- pairing upper bound


def pairing_instance(x_positions, rng, lam=None):
    """Place ``y_i`` uniformly in ``B(x_i, r(x_i)/2)`` with ``r(x_i) = min_j |x_j - x_i| / 2``.

    Returns the configuration (not box-checked) and the radii ``r(x_i)``.
    """
    x = np.atleast_2d(np.asarray(x_positions, dtype=float))
    n = len(x)
    r = r_half(x) if n > 1 else np.array([math.sqrt(n)])
    rad = 0.5 * r * np.sqrt(rng.random(n))
    ang = rng.uniform(0.0, 2.0 * math.pi, n)
    y = x + rad[:, None] * np.column_stack([np.cos(ang), np.sin(ang)])
    return SignedConfiguration.from_pairs(x, y, check_box=False), r


def pairing_parts(config, r, lam, kernel=None):
    """``(A, B)`` with the pairing upper bound equal to ``A + C B``."""
    k = kernel or default_kernel()
    dxy = np.linalg.norm(config.x - config.y, axis=1)
    a = -float(np.sum(k.g_lambda_dist(lam, dxy)))
    b = float(np.sum(dxy**2 / r**2))
    return a, b


def pairing_upper_bound_check(x_positions, lam, rng, C=1.0, kernel=None) -> BoundReport:
    """Check ``F <= -sum g_lambda(x_i - y_i) + C sum |x_i - y_i|^2 / r(x_i)^2`` on one random pairing.

    ``lhs`` is the bound, ``rhs`` the energy, so ``gap >= 0`` means the bound holds.
    """
    cfg, r = pairing_instance(x_positions, rng)
    a, b = pairing_parts(cfg, r, lam, kernel)
    f = energy(cfg, lam, kernel)
    return BoundReport.make(a + C * b, f, C, minimal_constant=_min_constant(f - a, b))


# --------------------------------------------------------------------------- calibration


def _min_constant(excess, b):
    """Smallest ``C >= 0`` with ``excess <= C b``; ``inf`` if impossible."""
    if excess <= BOUND_TOLERANCE:
        return 0.0
    if b <= 0:
        return math.inf
    return excess / b


@dataclass
class Instance:
    config: SignedConfiguration
    lam: float
    decomposition: GraphDecomposition | None = None
    pairing_radii: np.ndarray | None = None

    @property
    def dec(self):
        if self.decomposition is None:
            self.decomposition = build_decomposition(self.config, self.lam)
        return self.decomposition


def random_lower_bound_instance(rng, n_max=20, lam_range=(1e-3, 1e-1)):
    """A random configuration with ``N <= n_max`` for the lower-bound suites.

    Half of the draws are iid uniform; the other half place each negative
    charge near a positive one at a log-uniform distance, so that isolated
    dipoles, pairs and trees all occur.
    """
    n = int(rng.integers(1, n_max + 1))
    lam = float(math.exp(rng.uniform(math.log(lam_range[0]), math.log(lam_range[1]))))
    side = math.sqrt(n)
    x = rng.uniform(0.0, side, (n, 2))
    if rng.random() < 0.5:
        y = rng.uniform(0.0, side, (n, 2))
    else:
        d = np.exp(rng.uniform(math.log(lam / 4), math.log(side), n))
        ang = rng.uniform(0.0, 2.0 * math.pi, n)
        y = np.clip(x + d[:, None] * np.column_stack([np.cos(ang), np.sin(ang)]), 0.0, side)
    return Instance(SignedConfiguration.from_pairs(x, y), lam)


def random_pairing_instance(rng, n_max=20, lam_range=(1e-3, 1e-1)):
    n = int(rng.integers(1, n_max + 1))
    lam = float(math.exp(rng.uniform(math.log(lam_range[0]), math.log(lam_range[1]))))
    x = rng.uniform(0.0, math.sqrt(n), (n, 2))
    cfg, r = pairing_instance(x, rng)
    return Instance(cfg, lam, pairing_radii=r)


def _lower_excess(kind, inst, kernel):
    parts = prop21_parts if kind == "prop21" else cor22_parts
    a, b = parts(inst.config, inst.lam, inst.dec, kernel)
    f = energy(inst.config, inst.lam, kernel)
    return a - f, b


def minimal_constants(kind, instances, kernel=None):
    """Per-instance smallest admissible constant for ``kind`` in {'prop21', 'cor22', 'pairing'}."""
    out = np.empty(len(instances))
    for k, inst in enumerate(instances):
        if kind == "pairing":
            a, b = pairing_parts(inst.config, inst.pairing_radii, inst.lam, kernel)
            out[k] = _min_constant(energy(inst.config, inst.lam, kernel) - a, b)
        else:
            excess, b = _lower_excess(kind, inst, kernel)
            out[k] = _min_constant(excess, b)
    return out


def count_violations(kind, instances, C, kernel=None):
    """Number of instances on which the bound with constant ``C`` fails, and the worst gap."""
    worst = math.inf
    bad = 0
    for inst in instances:
        f = energy(inst.config, inst.lam, kernel)
        if kind == "pairing":
            a, b = pairing_parts(inst.config, inst.pairing_radii, inst.lam, kernel)
            gap = a + C * b - f
        else:
            parts = prop21_parts if kind == "prop21" else cor22_parts
            a, b = parts(inst.config, inst.lam, inst.dec, kernel)
            gap = f - (a - C * b)
        worst = min(worst, gap)
        bad += gap < -BOUND_TOLERANCE
    return bad, worst


@dataclass
class CalibrationResult:
    kind: str
    train_size: int
    test_size: int
    raw_max: float
    safety_factor: float
    constant: float
    violations: int
    worst_gap: float

    @property
    def passed(self):
        return self.violations == 0 and math.isfinite(self.constant)

    def to_dict(self):
        d = asdict(self)
        d["passed"] = self.passed
        return d


# Multiplier applied to the training maximum before freezing it; see the
# discussion of exchangeable maxima in the README.
SAFETY_FACTOR = 2.0


def calibrate_and_test(kind, train, test, safety_factor=SAFETY_FACTOR, kernel=None) -> CalibrationResult:
    """Freeze ``C = safety_factor * max(minimal constants on train)`` and count violations on ``test``."""
    raw = float(np.max(minimal_constants(kind, train, kernel))) if len(train) else 0.0
    c = safety_factor * raw
    bad, worst = count_violations(kind, test, c, kernel)
    return CalibrationResult(kind, len(train), len(test), raw, safety_factor, c, int(bad), float(worst))


def make_instances(kind, count, rng, n_max=20):
    gen = random_pairing_instance if kind == "pairing" else random_lower_bound_instance
    return [gen(rng, n_max) for _ in range(count)]
