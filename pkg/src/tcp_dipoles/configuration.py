"""Signed point configurations in the box ``[0, sqrt(N)]^2`` and their energies.

A configuration stores ``2N`` points.  The first ``N`` carry charge ``+1``
and the last ``N`` carry charge ``-1``.  The pair energy is

    F = 1/2 * sum_{i != j} d_i d_j g_lambda(z_i - z_j)

with ``g_lambda`` the smeared interaction of :mod:`tcp_dipoles.kernel`.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numba
import numpy as np

from .kernel import _g1_eval, default_kernel


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SignedConfiguration:
    """``2N`` points with charges ``+1`` (first half) and ``-1`` (second half).

    Parameters
    ----------
    positions : array_like, shape (2N, 2)
    check_box : bool
        Reject points outside ``[0, sqrt(N)]^2``.  Turned off only for
        auxiliary computations that do not live in the sampling box.
    """

    positions: np.ndarray
    check_box: bool = field(default=True, repr=False)

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64, copy=True)
        if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] == 0 or pos.shape[0] % 2:
            raise ConfigurationError(f"positions must have shape (2N, 2), got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ConfigurationError("positions must be finite")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        if self.check_box and not in_box(pos, self.box_side):
            raise ConfigurationError("some positions lie outside the box [0, sqrt(N)]^2")

    @classmethod
    def from_pairs(cls, x, y, check_box=True):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if x.shape != y.shape:
            raise ConfigurationError("x and y must have the same shape")
        return cls(np.vstack([x, y]), check_box=check_box)

    @property
    def n(self) -> int:
        return self.positions.shape[0] // 2

    @property
    def box_side(self) -> float:
        return math.sqrt(self.n)

    @property
    def charges(self) -> np.ndarray:
        return charges_for(self.n)

    @property
    def x(self):
        return self.positions[: self.n]

    @property
    def y(self):
        return self.positions[self.n :]

    def with_position(self, index, new_position):
        pos = self.positions.copy()
        pos[index] = new_position
        return SignedConfiguration(pos, check_box=self.check_box)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("idx,charge,x,y\n")
        for i, ((px, py), q) in enumerate(zip(self.positions, self.charges)):
            buf.write(f"{i},{int(q):+d},{px:.17g},{py:.17g}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, check_box=True):
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows:
            raise ConfigurationError("empty snapshot")
        rows.sort(key=lambda r: int(r["idx"]))
        pos = np.array([[float(r["x"]), float(r["y"])] for r in rows])
        q = np.array([int(r["charge"]) for r in rows])
        cfg = cls(pos, check_box=check_box)
        if not np.array_equal(q, cfg.charges):
            raise ConfigurationError("charges must be +1 for the first half and -1 for the second half")
        return cfg


def charges_for(n):
    return np.concatenate([np.ones(n), -np.ones(n)])


def in_box(positions, side):
    p = np.asarray(positions)
    return bool(np.all((p >= 0.0) & (p <= side)))


def uniform_configuration(n, rng):
    """``2N`` iid uniform points in the box."""
    return SignedConfiguration(rng.uniform(0.0, math.sqrt(n), size=(2 * n, 2)))


# --------------------------------------------------------------------------- energies


@numba.njit(cache=True)
def _g_lam(r, lam, log_lam, coef, h):
    if r >= 2.0 * lam:
        return -math.log(r)
    return -log_lam + _g1_eval(r / lam, coef, h)


@numba.njit(cache=True)
def pair_energy(pos, charges, lam, coef, h):
    """Compensated O(N^2) sum of ``d_i d_j g_lambda`` over unordered pairs."""
    m = pos.shape[0]
    log_lam = math.log(lam)
    s = 0.0
    c = 0.0
    for i in range(m):
        xi = pos[i, 0]
        yi = pos[i, 1]
        for j in range(i + 1, m):
            dx = xi - pos[j, 0]
            dy = yi - pos[j, 1]
            term = charges[i] * charges[j] * _g_lam(math.sqrt(dx * dx + dy * dy), lam, log_lam, coef, h) - c
            t = s + term
            c = (t - s) - term
            s = t
    return s


@numba.njit(cache=True)
def site_energy(pos, charges, k, px, py, lam, coef, h):
    """Interaction of charge ``k`` placed at ``(px, py)`` with every other charge."""
    log_lam = math.log(lam)
    s = 0.0
    for j in range(pos.shape[0]):
        if j == k:
            continue
        dx = px - pos[j, 0]
        dy = py - pos[j, 1]
        s += charges[j] * _g_lam(math.sqrt(dx * dx + dy * dy), lam, log_lam, coef, h)
    return charges[k] * s


def _check_lambda(lam):
    if not lam > 0:
        raise ValueError("lambda must be positive")


def energy(config: SignedConfiguration, lam: float, kernel=None) -> float:
    """Pair energy ``F_lambda``."""
    _check_lambda(lam)
    k = kernel or default_kernel()
    return float(pair_energy(config.positions, config.charges, float(lam), k.coef, k.table_spacing))


def energy_delta(config: SignedConfiguration, lam: float, moved_index: int, new_position, kernel=None) -> float:
    """Change of ``F_lambda`` when one charge moves (O(N))."""
    _check_lambda(lam)
    k = kernel or default_kernel()
    pos, q = config.positions, config.charges
    new = np.asarray(new_position, dtype=float)
    if config.check_box and not in_box(new, config.box_side):
        raise ConfigurationError("new position outside the box")
    old = pos[moved_index]
    e_new = site_energy(pos, q, moved_index, new[0], new[1], float(lam), k.coef, k.table_spacing)
    e_old = site_energy(pos, q, moved_index, old[0], old[1], float(lam), k.coef, k.table_spacing)
    return float(e_new - e_old)


def exact_log_energy(config: SignedConfiguration) -> float:
    """Point-charge energy with the plain logarithm (diverges on coincident points)."""
    z = config.positions
    q = config.charges
    iu = np.triu_indices(len(z), 1)
    r = np.linalg.norm(z[iu[0]] - z[iu[1]], axis=1)
    return float(np.sum(q[iu[0]] * q[iu[1]] * -np.log(r)))


def _nn_terms(config, lam, decomposition, kernel):
    k = kernel or default_kernel()
    z = config.positions
    phi1 = decomposition.phi1
    return k.g_lambda_dist(lam, np.linalg.norm(z - z[phi1], axis=1))


def _decomp(config, lam, decomposition):
    if decomposition is None:
        from .nngraph import build_decomposition

        decomposition = build_decomposition(config, lam)
    return decomposition


def nn_energy(config: SignedConfiguration, lam: float, decomposition=None, kernel=None) -> float:
    """Nearest-neighbour energy ``-1/2 sum_i g_lambda(z_i - z_phi1(i))`` (charge-blind)."""
    _check_lambda(lam)
    dec = _decomp(config, lam, decomposition)
    return float(-0.5 * np.sum(_nn_terms(config, lam, dec, kernel)))


def tilde_energy(config: SignedConfiguration, lam: float, decomposition=None, kernel=None) -> float:
    """Nearest-neighbour energy restricted to mutual nearest-neighbour opposite-sign pairs."""
    _check_lambda(lam)
    dec = _decomp(config, lam, decomposition)
    phi1 = dec.phi1
    q = config.charges
    mask = (phi1[phi1] == np.arange(len(phi1))) & (q * q[phi1] < 0)
    return float(-0.5 * np.sum(_nn_terms(config, lam, dec, kernel)[mask]))


@dataclass(frozen=True)
class EnergyBreakdown:
    total: float
    nn_part: float
    tilde_part: float


def energy_breakdown(config, lam, decomposition=None, kernel=None) -> EnergyBreakdown:
    dec = _decomp(config, lam, decomposition)
    return EnergyBreakdown(
        energy(config, lam, kernel), nn_energy(config, lam, dec, kernel), tilde_energy(config, lam, dec, kernel)
    )


# --------------------------------------------------------------------------- fluctuations


@dataclass(frozen=True)
class TestFunction:
    """A test function ``xi0`` on unit-square coordinates with a bound on ``|grad xi0|``."""

    __test__ = False  # keep pytest from collecting it

    name: str
    func: Callable[[np.ndarray], np.ndarray]
    grad_bound: float


_CENTRE = np.array([0.5, 0.5])
_RHO = 0.4


def _bump(u):
    s = np.sum((u - _CENTRE) ** 2, axis=-1) / _RHO**2
    return np.where(s < 1.0, (1.0 - s) ** 2, 0.0)


def _cone(u):
    return np.maximum(0.0, _RHO - np.linalg.norm(u - _CENTRE, axis=-1))


def _ramp(u):
    # first coordinate cut off smoothly outside the disc |u - c| < rho
    r = np.linalg.norm(u - _CENTRE, axis=-1)
    return (u[..., 0] - _CENTRE[0]) * np.clip(2.0 - 2.0 * r / _RHO, 0.0, 1.0)


TEST_FUNCTIONS = {
    # max |d/dr (1 - r^2/rho^2)^2| is reached at r = rho/sqrt(3)
    "bump": TestFunction("bump", _bump, 8.0 / (3.0 * math.sqrt(3.0) * _RHO)),
    "cone": TestFunction("cone", _cone, 1.0),
    # |grad| <= cutoff + |u1 - c1| * |grad cutoff| <= 1 + rho * 2/rho
    "ramp": TestFunction("ramp", _ramp, 3.0),
    "coordinate": TestFunction("coordinate", lambda u: u[..., 0], 1.0),
    "plateau": TestFunction("plateau", lambda u: np.ones(u.shape[:-1]), 0.0),
}


def get_test_function(xi0) -> TestFunction:
    if isinstance(xi0, TestFunction):
        return xi0
    if isinstance(xi0, str):
        try:
            return TEST_FUNCTIONS[xi0]
        except KeyError:
            raise ValueError(f"unknown test function {xi0!r}; choose from {sorted(TEST_FUNCTIONS)}") from None
    if callable(xi0):
        return TestFunction(getattr(xi0, "__name__", "custom"), xi0, float("nan"))
    raise TypeError("xi0 must be a name, a TestFunction or a callable")


def fluctuation(config: Union[SignedConfiguration, tuple], xi0, grad_bound=None) -> float:
    """``sum_i xi(x_i) - sum_i xi(y_i)`` with ``xi(p) = xi0(p / sqrt(N))``.

    ``config`` may also be a pair ``(x, y)`` of point arrays.  ``grad_bound``
    is accepted for symmetry with :func:`fluctuation_bound` and is not used.
    """
    if isinstance(config, SignedConfiguration):
        x, y, n = config.x, config.y, config.n
    else:
        x, y = (np.atleast_2d(np.asarray(a, dtype=float)) for a in config)
        n = len(x)
    f = get_test_function(xi0).func
    scale = 1.0 / math.sqrt(n)
    return float(np.sum(f(x * scale)) - np.sum(f(y * scale)))


def fluctuation_bound(config: SignedConfiguration, grad_bound: float) -> float:
    """Lipschitz bound ``grad_bound / sqrt(N) * min_sigma sum |x_i - y_sigma(i)|``."""
    from scipy.optimize import linear_sum_assignment
    from scipy.spatial.distance import cdist

    cost = cdist(config.x, config.y)
    rows, cols = linear_sum_assignment(cost)
    return float(grad_bound / math.sqrt(config.n) * cost[rows, cols].sum())
