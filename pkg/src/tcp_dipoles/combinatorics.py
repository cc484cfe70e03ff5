"""Counting nearest-neighbour graph shapes and Dirichlet-type integrals.

A nearest-neighbour graph shape on ``p`` labelled vertices is a map
``phi: {0..p-1} -> {0..p-1}`` without fixed points whose cycles all have
length two.  The number of such maps with ``K`` components (equivalently
``K`` two-cycles) is

    |D_{p,K}| = 2 (p-1)! p^(p-2K) / (2^K (K-1)! (p-2K)!)
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.special import gammaln
from scipy.stats import qmc

EXACT_COUNT_LIMIT = 200
ENUMERATION_LIMIT = 8


@dataclass(frozen=True)
class GraphCount:
    p: int
    k: int
    count: int | None  # exact value, ``None`` beyond EXACT_COUNT_LIMIT
    log_count: float


def _log_count(p, k):
    return (
        math.log(2.0)
        + gammaln(p)
        + (p - 2 * k) * math.log(p)
        - k * math.log(2.0)
        - gammaln(k)
        - gammaln(p - 2 * k + 1)
    )


def count_nn_graphs(p: int, k: int) -> GraphCount:
    """Number of nearest-neighbour graph shapes on ``p`` vertices with ``k`` components."""
    if p < 2 or k < 1:
        raise ValueError("need p >= 2 and K >= 1")
    if 2 * k > p:
        raise ValueError("2K > p: every component needs at least two vertices")
    log_val = float(_log_count(p, k))
    if p > EXACT_COUNT_LIMIT:
        return GraphCount(p, k, None, log_val)
    val = Fraction(2 * math.factorial(p - 1) * p ** (p - 2 * k), 2**k * math.factorial(k - 1) * math.factorial(p - 2 * k))
    if val.denominator != 1:
        raise ArithmeticError(f"non-integer count for p={p}, K={k}")
    count = int(val)
    return GraphCount(p, k, count, math.log(count))


def stirling_log_count(p, k):
    """Leading terms ``p log p - K log K + (p-2K)(log p - log(p-2K)) - K - K log 2``."""
    rem = p - 2 * k
    mid = rem * (math.log(p) - math.log(rem)) if rem > 0 else 0.0
    return p * math.log(p) - k * math.log(k) + mid - k - k * math.log(2.0)


@dataclass(frozen=True)
class Enumeration:
    """All shapes on ``p`` vertices: one map per row of ``maps``, its component count in ``k``."""

    p: int
    maps: np.ndarray
    k: np.ndarray

    def counts(self):
        """``{K: number of shapes}``."""
        ks, cs = np.unique(self.k, return_counts=True)
        return {int(a): int(b) for a, b in zip(ks, cs)}

    def group(self, k):
        return self.maps[self.k == k]

    def __len__(self):
        return len(self.maps)


def _filter_shapes(maps):
    p = maps.shape[1]
    ar = np.arange(p)
    ok = np.all(maps != ar, axis=1)
    maps = maps[ok]
    rows = np.arange(len(maps))[:, None]
    # after p steps every walk sits on a cycle; a 2-cycle returns in two steps
    v = np.broadcast_to(ar, maps.shape).copy()
    for _ in range(p):
        v = maps[rows, v]
    ok = np.all(maps[rows, maps[rows, v]] == v, axis=1)
    maps = maps[ok]
    rows = rows[: len(maps)]
    two = maps[rows, maps] == ar
    k = np.sum(two & (ar < maps), axis=1)
    return maps, k


def enumerate_nn_graphs(p: int) -> Enumeration:
    """Brute-force list of all nearest-neighbour graph shapes on ``p <= 8`` vertices.

    The ``p^p`` maps are scanned in blocks sharing the image of vertex 0.
    """
    if p < 2:
        raise ValueError("need p >= 2")
    if p > ENUMERATION_LIMIT:
        raise ValueError(f"enumeration is limited to p <= {ENUMERATION_LIMIT}")
    # all maps of the last p-1 vertices, as base-p digits
    tail = np.indices((p,) * (p - 1), dtype=np.int8).reshape(p - 1, -1).T
    all_maps, all_k = [], []
    for first in range(1, p):  # phi(0) != 0
        block = np.empty((len(tail), p), dtype=np.int8)
        block[:, 0] = first
        block[:, 1:] = tail
        maps, k = _filter_shapes(block)
        all_maps.append(maps)
        all_k.append(k)
    return Enumeration(p, np.concatenate(all_maps), np.concatenate(all_k))


# --------------------------------------------------------------------------- Dirichlet integrals


def dirichlet_integral(alphas, s) -> float:
    """``log`` of ``int_{t > 0, sum t < s} prod t_i^(alpha_i - 1) dt``.

    Closed form ``s^A prod Gamma(alpha_i) / Gamma(A) / A`` with ``A = sum alpha``.
    """
    a = np.asarray(alphas, dtype=float)
    if a.ndim != 1 or len(a) == 0 or np.any(a <= 0) or not s > 0:
        raise ValueError("need positive alphas and s > 0")
    tot = a.sum()
    return float(tot * math.log(s) + np.sum(gammaln(a)) - gammaln(tot) - math.log(tot))


@dataclass(frozen=True)
class MCEstimate:
    value: float
    se: float
    log_value: float
    log_se: float  # delta-method standard error of the log


def _mc_estimate(batch_means):
    m = float(np.mean(batch_means))
    se = float(np.std(batch_means, ddof=1) / math.sqrt(len(batch_means)))
    return MCEstimate(m, se, math.log(m) if m > 0 else -math.inf, se / m if m > 0 else math.inf)


def dirichlet_integral_mc(alphas, s, samples, rng, batches=32) -> MCEstimate:
    """Importance-sampled estimate of the same integral (oracle for :func:`dirichlet_integral`).

    Points are drawn as ``s * Dirichlet(b_1, ..., b_k, 1)`` (first ``k``
    coordinates) with ``b_i = 1`` for ``alpha_i >= 0.6`` and ``1.5 alpha_i``
    otherwise, which keeps ``b_i < 2 alpha_i`` and so the weights have finite
    variance.
    """
    a = np.asarray(alphas, dtype=float)
    k = len(a)
    b = np.where(a >= 0.6, 1.0, 1.5 * a)
    per = max(2, samples // batches)
    log_norm = gammaln(b.sum() + 1.0) - np.sum(gammaln(b)) - k * math.log(s)
    means = np.empty(batches)
    for j in range(batches):
        u = rng.dirichlet(np.append(b, 1.0), size=per)[:, :k]
        t = s * u
        with np.errstate(divide="ignore"):
            log_f = np.sum((a - 1.0) * np.log(t), axis=1)
            log_q = log_norm + np.sum((b - 1.0) * np.log(u), axis=1)
        means[j] = np.mean(np.exp(log_f - log_q))
    return _mc_estimate(means)


def truncated_log_dirichlet_exact_p1(s, lam, delta):
    """Closed forms for ``p = 1``: ``log(s/lam)`` and ``log(s/lam) + log(s/lam)^2 / 2``."""
    ell = math.log(s / lam)
    return ell if delta == 0 else ell + 0.5 * ell * ell


def truncated_log_bound(p, s, lam):
    """Leading term ``p log|log(lam p / s)|`` of the upper bound on the log of the truncated integral."""
    return p * math.log(abs(math.log(lam * p / s)))


def truncated_log_dirichlet_mc(p, s, lam, delta, samples, rng, batches=32) -> MCEstimate:
    """Estimate ``int 1{sum t < s} prod 1{t_i >= lam} (1 + log(t_i/lam))^delta / t_i dt``.

    Each ``log t_i`` is drawn uniformly on ``[log lam, log s]``, which is the
    importance density ``prop. to prod 1/t_i``, with Latin-hypercube
    stratification inside every batch.  For ``p = 1, delta = 0`` the weight is
    constant and the estimate is exact.
    """
    if delta not in (0, 1):
        raise ValueError("delta must be 0 or 1")
    if lam * p / s > 0.5:
        raise ValueError("need lam * p / s <= 1/2")
    ell = math.log(s / lam)
    per = max(2, samples // batches)
    sampler = qmc.LatinHypercube(d=p, seed=rng)
    means = np.empty(batches)
    for j in range(batches):
        u = sampler.random(per)
        logt = u * ell  # log(t / lam)
        t = lam * np.exp(logt)
        inside = t.sum(axis=1) < s
        w = np.prod(1.0 + logt, axis=1) if delta else np.ones(per)
        means[j] = ell**p * np.mean(w * inside)
    return _mc_estimate(means)
