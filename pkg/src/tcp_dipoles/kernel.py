"""Smeared Coulomb interaction in two dimensions.

Every charge is spread uniformly over a disc.  Outside its disc the potential
of such a charge is the plain logarithm, so two smeared charges interact
exactly like point charges once their discs are disjoint.  Only the overlap
regime needs numerical work, and it is reduced to a one-dimensional radial
integral:

    G(a, b, r) = 1/(pi b^2) * int_0^{r+b} f_a(s) * 2 s theta(s) ds

where ``f_a`` is the radial potential of a disc of radius ``a`` and
``2 s theta(s)`` is the length of the circle ``|y| = s`` lying inside the
second disc (radius ``b``, centre at distance ``r``).

The unit-radius overlap kernel ``g1(r) = G(1, 1, r)`` is tabulated on
``[0, 2]`` and interpolated with a monotone cubic, so that the sampler's inner
loop never calls the quadrature.
"""

from __future__ import annotations

import functools
import math

import numba
import numpy as np
from scipy.interpolate import PchipInterpolator

KAPPA = 0.25
KAPPA_TOLERANCE = 1e-6
TABLE_SPACING = 1e-3
TAIL_START = 2.0

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)


class KernelConfigurationError(RuntimeError):
    """Raised when the tabulated kernel disagrees with its frozen reference."""


def radial_disc_potential(a, s):
    """Potential at distance ``s`` from the centre of a unit charge on a disc of radius ``a``."""
    s = np.asarray(s, dtype=float)
    inside = s < a
    with np.errstate(divide="ignore"):
        out = np.where(inside, -math.log(a) + 0.5 * (1.0 - (s / a) ** 2), -np.log(np.where(inside, 1.0, s)))
    return out


def disc_potential(a, x):
    """Potential of a uniform unit charge on ``B(0, a)`` evaluated at the point ``x``.

    Equals ``-log|x|`` for ``|x| >= a`` (Newton's theorem) and
    ``-log a + (1 - |x|^2/a^2)/2`` inside the disc.  ``x`` may be a single
    point or an array of points with a trailing axis of length 2.
    """
    if a <= 0:
        raise ValueError("disc radius must be positive")
    x = np.asarray(x, dtype=float)
    s = np.sqrt(np.sum(x * x, axis=-1))
    out = radial_disc_potential(a, s)
    return float(out) if out.ndim == 0 else out


def _half_angle(s, b, r):
    # half of the angle subtended by the arc of |y| = s inside B(z, b), |z| = r
    if r == 0.0:
        return np.where(s < b, np.pi, 0.0)
    c = (s * s + r * r - b * b) / (2.0 * s * r)
    return np.arccos(np.clip(c, -1.0, 1.0))


def _panel(f, lo, hi, sing_lo, sing_hi):
    """Gauss-Legendre on [lo, hi]; square-root endpoint singularities are removed by s = lo + (hi-lo) t^2."""
    if hi <= lo:
        return 0.0
    if sing_lo and sing_hi:
        mid = 0.5 * (lo + hi)
        return _panel(f, lo, mid, True, False) + _panel(f, mid, hi, False, True)
    t = 0.5 * (_GL_NODES + 1.0)
    w = 0.5 * _GL_WEIGHTS
    if sing_lo:
        s = lo + (hi - lo) * t * t
        jac = 2.0 * (hi - lo) * t
    elif sing_hi:
        s = hi - (hi - lo) * t * t
        jac = 2.0 * (hi - lo) * t
    else:
        s = lo + (hi - lo) * t
        jac = np.full_like(t, hi - lo)
    return float(np.sum(w * jac * f(s)))


def _overlap_integral(a, b, r):
    # radial reduction of the disc-disc interaction; see module docstring
    def integrand(s):
        return radial_disc_potential(a, s) * 2.0 * s * _half_angle(s, b, r)

    if r == 0.0:
        cuts = sorted({0.0, min(a, b), b})
        singular = set()
    else:
        lo_edge = abs(b - r)
        hi_edge = b + r
        cuts = sorted({0.0, lo_edge, hi_edge} | ({a} if a < hi_edge else set()))
        singular = {lo_edge, hi_edge} - {0.0}
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if r > 0.0 and r > b and hi <= r - b:
            continue  # circle |y| = s misses the second disc entirely
        total += _panel(integrand, lo, hi, lo in singular, hi in singular)
    return total / (math.pi * b * b)


def generalized_disc_interaction(a, b, z):
    """Interaction energy of unit disc charges of radii ``a`` and ``b`` at separation ``z``.

    ``z`` is a separation vector or a non-negative distance.  Disjoint or
    tangent discs take the exact Newton branch ``-log|z|``; overlapping discs
    are integrated numerically (relative accuracy about 1e-12 on the panels
    used here, well below the 1e-8 contract).
    """
    if a <= 0 or b <= 0:
        raise ValueError("disc radii must be positive")
    r = float(np.hypot(*z)) if np.ndim(z) else abs(float(z))
    if r >= a + b:
        return -math.log(r)
    return _overlap_integral(a, b, r)


def g1_exact(r):
    """Overlap kernel for unit discs computed directly by quadrature (vectorised over ``r``)."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    out = np.empty_like(r)
    for k, rk in enumerate(r):
        out[k] = generalized_disc_interaction(1.0, 1.0, rk)
    return out


def compute_kappa():
    """Self-interaction constant of the unit disc charge, by quadrature."""
    return _overlap_integral(1.0, 1.0, 0.0)


@numba.njit(cache=True)
def _g1_eval(s, coef, h):
    # monotone cubic on a uniform grid over [0, 2]; plain logarithm beyond
    if s >= 2.0:
        return -math.log(s)
    k = int(s / h)
    m = coef.shape[1]
    if k >= m:
        k = m - 1
    t = s - k * h
    return ((coef[0, k] * t + coef[1, k]) * t + coef[2, k]) * t + coef[3, k]


@numba.njit(cache=True)
def g_lambda_dist(r, lam, coef, h):
    """Smeared interaction at distance ``r`` (jitted scalar form used in the sampler)."""
    if r >= 2.0 * lam:
        return -math.log(r)
    return -math.log(lam) + _g1_eval(r / lam, coef, h)


class SmearedKernel:
    """Tabulated overlap kernel ``g1`` plus the exact Newton branch.

    Parameters
    ----------
    spacing : float
        Grid spacing of the ``g1`` table on ``[0, 2]``.
    check_kappa : bool
        Cross-check the quadrature value of kappa against 1/4 and refuse to
        build a kernel that disagrees by more than ``KAPPA_TOLERANCE``.
    """

    def __init__(self, spacing=TABLE_SPACING, check_kappa=True):
        n = int(round(TAIL_START / spacing))
        self.table_spacing = TAIL_START / n
        self.table_r = np.linspace(0.0, TAIL_START, n + 1)
        self.overlap_table = g1_exact(self.table_r)
        self.kappa = compute_kappa()
        if check_kappa and abs(self.kappa - KAPPA) > KAPPA_TOLERANCE:
            raise KernelConfigurationError(f"kappa = {self.kappa!r}, expected {KAPPA}")
        interp = PchipInterpolator(self.table_r, self.overlap_table)
        self.coef = np.ascontiguousarray(interp.c)

    def g1(self, r):
        """Tabulated ``g1``; exact ``-log r`` for ``r >= 2``."""
        r = np.asarray(r, dtype=float)
        h = self.table_spacing
        rr = np.minimum(r, TAIL_START)
        k = np.minimum((rr / h).astype(np.int64), self.coef.shape[1] - 1)
        t = rr - k * h
        c = self.coef
        body = ((c[0, k] * t + c[1, k]) * t + c[2, k]) * t + c[3, k]
        with np.errstate(divide="ignore"):
            out = np.where(r >= TAIL_START, -np.log(np.where(r >= TAIL_START, r, 1.0)), body)
        return float(out) if out.ndim == 0 else out

    def g_lambda_dist(self, lam, r):
        """``g_lambda`` as a function of distance ``r`` (array friendly)."""
        if lam <= 0:
            raise ValueError("lambda must be positive")
        r = np.abs(np.asarray(r, dtype=float))
        far = r >= 2.0 * lam
        with np.errstate(divide="ignore"):
            out = np.where(far, -np.log(np.where(far, r, 1.0)), -math.log(lam) + self.g1(np.where(far, 0.0, r / lam)))
        return float(out) if out.ndim == 0 else out

    def g_lambda(self, lam, z):
        """Interaction of two discs of radius ``lam`` at separation vector ``z``."""
        z = np.asarray(z, dtype=float)
        r = np.sqrt(np.sum(z * z, axis=-1)) if z.ndim else abs(float(z))
        return self.g_lambda_dist(lam, r)

    def to_csv_rows(self):
        return [(float(r), float(g)) for r, g in zip(self.table_r, self.overlap_table)]


@functools.lru_cache(maxsize=None)
def default_kernel():
    """Process-wide kernel, built once (a few hundred milliseconds)."""
    return SmearedKernel()


def g_lambda(lam, z):
    """Smeared interaction ``-log(lam) + g1(|z|/lam)``; exactly ``-log|z|`` once ``|z| >= 2 lam``."""
    return default_kernel().g_lambda(lam, z)


def z_beta(beta):
    """Normalising constant of the dipole-length law for ``beta > 2``.

    Body ``2 pi int_0^2 exp(beta g1) r dr`` by Gauss-Legendre on directly
    computed ``g1`` values, plus the closed-form Pareto tail
    ``2 pi 2^(2-beta) / (beta - 2)``.  At ``beta = 2`` the integral diverges
    and the caller is expected to use the conventional value ``2 pi``.
    """
    if beta <= 2:
        raise ValueError("z_beta diverges for beta <= 2 (use 2*pi at beta == 2 by convention)")
    return 2.0 * math.pi * (_body_integral(beta) + TAIL_START ** (2.0 - beta) / (beta - 2.0))


@functools.lru_cache(maxsize=64)
def _body_integral(beta):
    edges = np.linspace(0.0, TAIL_START, 9)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        s = lo + (hi - lo) * 0.5 * (_GL_NODES + 1.0)
        total += 0.5 * (hi - lo) * float(np.sum(_GL_WEIGHTS * np.exp(beta * g1_exact(s)) * s))
    return total


class DipoleLaw:
    """Law of the rescaled dipole length, density proportional to ``exp(beta g1(s)) s``.

    For ``beta > 2`` the law lives on ``[0, inf)`` with an exact Pareto tail
    beyond ``s = 2``.  Passing ``s_max`` conditions it on ``[0, s_max]``
    (used for box-limited comparisons, and mandatory when ``beta <= 2``).
    The body CDF is a 4096-point table built from the tabulated kernel.
    """

    def __init__(self, beta, s_max=None, kernel=None, n_table=4096):
        if s_max is None and beta <= 2:
            raise ValueError("an untruncated dipole law needs beta > 2")
        if s_max is not None and s_max <= 0:
            raise ValueError("s_max must be positive")
        self.beta = float(beta)
        self.s_max = None if s_max is None else float(s_max)
        self.tail_exponent = self.beta - 2.0
        kernel = kernel or default_kernel()
        self.s_table = np.linspace(0.0, TAIL_START, n_table)
        # cumulative unnormalised mass, 4-point Gauss-Legendre per table interval
        x4, w4 = np.polynomial.legendre.leggauss(4)
        lo, hi = self.s_table[:-1], self.s_table[1:]
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        nodes = mid[:, None] + half[:, None] * x4[None, :]
        dens = self._weight_body(nodes, kernel)
        inc = half * np.sum(w4[None, :] * dens, axis=1)
        self.w_table = np.concatenate([[0.0], np.cumsum(inc)])
        self.body_mass = float(self.w_table[-1])
        full = self.body_mass + self._tail_mass(np.inf) if self.beta > 2 else np.inf
        self.z_full = full if self.beta > 2 else None
        self.total = self._unnormalised_cdf(self.s_max) if self.s_max is not None else full
        self.z_beta = self.total
        self.cdf_table = self.w_table / self.total

    def _weight_body(self, s, kernel):
        return 2.0 * math.pi * np.exp(self.beta * kernel.g1(s)) * s

    def _tail_mass(self, s):
        # unnormalised mass of [2, s]
        b = self.beta
        if s == np.inf:
            return 2.0 * math.pi * TAIL_START ** (2.0 - b) / (b - 2.0)
        if b == 2.0:
            return 2.0 * math.pi * math.log(s / TAIL_START)
        return 2.0 * math.pi * (s ** (2.0 - b) - TAIL_START ** (2.0 - b)) / (2.0 - b)

    def _unnormalised_cdf(self, s):
        if s <= TAIL_START:
            return float(np.interp(s, self.s_table, self.w_table))
        return self.body_mass + self._tail_mass(s)

    def pdf(self, s):
        """Density with respect to ``ds``."""
        s = np.asarray(s, dtype=float)
        kern = default_kernel()
        out = 2.0 * math.pi * np.exp(self.beta * kern.g1(np.maximum(s, 0.0))) * np.maximum(s, 0.0) / self.total
        out = np.where(s < 0, 0.0, out)
        if self.s_max is not None:
            out = np.where(s > self.s_max, 0.0, out)
        return float(out) if out.ndim == 0 else out

    def cdf(self, s):
        s = np.asarray(s, dtype=float)
        flat = np.atleast_1d(s)
        body = np.interp(np.minimum(flat, TAIL_START), self.s_table, self.w_table)
        b = self.beta
        top = np.maximum(flat, TAIL_START)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            if b == 2.0:
                tail = 2.0 * math.pi * np.log(top / TAIL_START)
            else:
                tail = 2.0 * math.pi * (top ** (2.0 - b) - TAIL_START ** (2.0 - b)) / (2.0 - b)
        out = np.where(flat <= TAIL_START, body, self.body_mass + tail) / self.total
        out = np.where(flat <= 0, 0.0, out)
        out = np.where(flat == np.inf, 1.0, out)
        if self.s_max is not None:
            out = np.where(flat >= self.s_max, 1.0, out)
        return float(out[0]) if s.ndim == 0 else out.reshape(s.shape)

    def survival(self, s):
        """``mu([s, inf))``; for ``s >= 2`` and no truncation this is exactly ``(2 pi / Z) s^(2-beta) / (beta-2)``."""
        if self.s_max is None and s >= TAIL_START:
            b = self.beta
            return 2.0 * math.pi * s ** (2.0 - b) / (b - 2.0) / self.total
        return 1.0 - self.cdf(s)

    def ppf(self, u):
        """Inverse CDF: table interpolation in the body, closed-form inversion in the tail."""
        u = np.asarray(u, dtype=float)
        flat = np.atleast_1d(u)
        target = flat * self.total
        out = np.interp(target, self.w_table, self.s_table)
        tail = target > self.body_mass
        if np.any(tail):
            b = self.beta
            extra = target[tail] - self.body_mass
            if b == 2.0:
                out[tail] = TAIL_START * np.exp(extra / (2.0 * math.pi))
            else:
                with np.errstate(divide="ignore", invalid="ignore"):
                    base = TAIL_START ** (2.0 - b) + (2.0 - b) * extra / (2.0 * math.pi)
                    out[tail] = np.where(base > 0, base ** (1.0 / (2.0 - b)), np.inf)
        if self.s_max is not None:
            out = np.minimum(out, self.s_max)
        return float(out[0]) if u.ndim == 0 else out.reshape(u.shape)

    def mean(self):
        """``int s dmu(s)`` by quadrature (finite for ``beta > 3`` or under truncation)."""
        x4, w4 = np.polynomial.legendre.leggauss(4)
        lo, hi = self.s_table[:-1], self.s_table[1:]
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        nodes = mid[:, None] + half[:, None] * x4[None, :]
        body = float(np.sum(half[:, None] * w4[None, :] * nodes * self._weight_body(nodes, default_kernel())))
        b = self.beta
        top = self.s_max if self.s_max is not None else np.inf
        if top == np.inf:
            if b <= 3:
                return np.inf
            tail = 2.0 * math.pi * TAIL_START ** (3.0 - b) / (b - 3.0)
        elif top <= TAIL_START:
            raise NotImplementedError("mean of a law truncated inside the overlap region")
        elif b == 3.0:
            tail = 2.0 * math.pi * math.log(top / TAIL_START)
        else:
            tail = 2.0 * math.pi * (top ** (3.0 - b) - TAIL_START ** (3.0 - b)) / (3.0 - b)
        return (body + tail) / self.total

    def sample(self, rng, size=None):
        return self.ppf(rng.random(size))

    def jit_tables(self):
        """Arrays consumed by the jitted resample move: (s_table, w_table, body_mass, total, beta, s_max)."""
        s_max = -1.0 if self.s_max is None else self.s_max
        return self.s_table, self.w_table, self.body_mass, self.total, self.beta, s_max


def mu_beta_sample(law, u):
    """Inverse-CDF draw from ``law`` at uniform level(s) ``u``."""
    return law.ppf(u)
