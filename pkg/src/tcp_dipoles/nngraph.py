"""Nearest-neighbour digraph of a configuration and its decomposition.

Every point ``i`` has an arrow to its nearest neighbour ``phi1(i)`` (ties go
to the lowest index).  In such a digraph every weakly connected component
contains exactly one 2-cycle ``{m, m'}`` (a mutual nearest-neighbour pair)
with trees hanging off it.  A 2-cycle that forms a whole component is an
*isolated pair*; an isolated pair of opposite charges is an *isolated
dipole*.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .configuration import SignedConfiguration

BRUTE_FORCE_BELOW = 64
_TIE_RTOL = 1e-12


class GraphShapeError(ValueError):
    pass


def _neighbour_rows(points, i, cand):
    d = np.hypot(points[cand, 0] - points[i, 0], points[cand, 1] - points[i, 1])
    order = np.lexsort((cand, d))
    return cand[order], d[order]


def nearest_neighbours(points, k=2):
    """Indices and distances of the ``k`` nearest neighbours of every point.

    Ties are broken by lowest index.  Small sets use brute force; larger ones
    query a k-d tree for a few extra candidates and fall back to brute force
    for any point whose candidate list ends in a (near) tie.

    Returns
    -------
    idx : (m, k) int array, ``-1`` where fewer than ``k`` neighbours exist
    dist : (m, k) float array, ``inf`` where fewer than ``k`` neighbours exist
    """
    pts = np.asarray(points, dtype=float)
    m = len(pts)
    idx = np.full((m, k), -1, dtype=np.int64)
    dist = np.full((m, k), np.inf)
    kk = min(k, m - 1)
    if kk <= 0:
        return idx, dist
    allidx = np.arange(m)
    if m < BRUTE_FORCE_BELOW:
        d = np.hypot(pts[:, None, 0] - pts[None, :, 0], pts[:, None, 1] - pts[None, :, 1])
        np.fill_diagonal(d, np.inf)
        cols = np.broadcast_to(allidx, (m, m))
        order = np.lexsort((cols, d), axis=-1)[:, :kk]
        idx[:, :kk] = order
        dist[:, :kk] = np.take_along_axis(d, order, axis=1)
        return idx, dist
    extra = min(m, kk + 4)
    _, cand = cKDTree(pts).query(pts, k=extra)
    d = np.hypot(pts[cand, 0] - pts[:, None, 0], pts[cand, 1] - pts[:, None, 1])
    d[cand == allidx[:, None]] = np.inf
    rows = np.repeat(allidx, extra)
    order = np.lexsort((cand.ravel(), d.ravel(), rows)).reshape(m, extra) - (allidx * extra)[:, None]
    c = np.take_along_axis(cand, order, axis=1)
    d = np.take_along_axis(d, order, axis=1)
    idx[:], dist[:] = c[:, :kk], d[:, :kk]
    # a candidate list ending in a (near) tie may hide a lower index further out
    for i in np.flatnonzero(~(d[:, kk] > d[:, kk - 1] * (1 + _TIE_RTOL))):
        ci, di = _neighbour_rows(pts, i, allidx[allidx != i])
        idx[i, :kk], dist[i, :kk] = ci[:kk], di[:kk]
    return idx, dist


@dataclass(frozen=True, eq=False)
class GraphDecomposition:
    """Nearest-neighbour graph data of one configuration.

    Attributes
    ----------
    phi1, phi2 : int arrays
        Nearest and second nearest neighbour (``phi2 = -1`` when ``2N = 2``).
    r1, r2 : float arrays
        Quarter distance to the first / second neighbour, clamped below by
        ``lambda``.  ``r2`` is ``inf`` when there is no second neighbour.
    component_id : int array
        Component label of every vertex, in ``range(k_components)``.
    two_cycles : (K, 2) int array
        Mutual pairs ``(m, m')`` with ``m < m'``, one per component, sorted.
    in_pair, in_dip, twice_isolated : bool arrays over vertices
        Membership of isolated pairs, isolated dipoles and twice-isolated
        dipoles.
    d_sums : int array
        ``D_i = d_i + d_phi1(i)``.
    """

    lam: float
    charges: np.ndarray
    phi1: np.ndarray
    phi2: np.ndarray
    dist1: np.ndarray
    dist2: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    component_id: np.ndarray
    two_cycles: np.ndarray
    in_degree: np.ndarray
    in_pair: np.ndarray
    in_dip: np.ndarray
    twice_isolated: np.ndarray
    d_sums: np.ndarray

    @property
    def size(self) -> int:
        return len(self.phi1)

    @property
    def k_components(self) -> int:
        return len(self.two_cycles)

    @property
    def components(self):
        return [np.flatnonzero(self.component_id == c) for c in range(self.k_components)]

    @property
    def i_pair(self):
        return np.flatnonzero(self.in_pair)

    @property
    def i_dip(self):
        return np.flatnonzero(self.in_dip)

    @property
    def twice_isolated_dips(self):
        return np.flatnonzero(self.twice_isolated)

    @property
    def in_two_cycle(self):
        return self.phi1[self.phi1] == np.arange(self.size)

    @property
    def n_pairs(self) -> int:
        return int(self.in_pair.sum()) // 2

    @property
    def n_dipoles(self) -> int:
        return int(self.in_dip.sum()) // 2

    @property
    def n_twice_isolated(self) -> int:
        return int(self.twice_isolated.sum()) // 2

    def isolated_dipoles(self):
        """``(m, m')`` rows of the isolated dipoles."""
        tc = self.two_cycles
        return tc[self.in_dip[tc[:, 0]]] if len(tc) else tc

    def to_edge_csv(self) -> str:
        buf = io.StringIO()
        buf.write("src,dst,is_two_cycle,component_id\n")
        cyc = self.in_two_cycle
        for i, j in enumerate(self.phi1):
            buf.write(f"{i},{j},{int(cyc[i])},{self.component_id[i]}\n")
        return buf.getvalue()


def _components(phi1):
    m = len(phi1)
    adj = coo_matrix((np.ones(m), (np.arange(m), phi1)), shape=(m, m))
    return connected_components(adj, directed=True, connection="weak")


def build_decomposition(config: SignedConfiguration, lam: float) -> GraphDecomposition:
    """Nearest-neighbour graph, successive radii and the pair/dipole taxonomy."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    pts = config.positions
    m = len(pts)
    if m < 2:
        raise ValueError("need at least two points")
    q = config.charges.astype(np.int64)
    nb, nd = nearest_neighbours(pts, 2)
    phi1, phi2 = nb[:, 0], nb[:, 1]
    r1 = np.maximum(0.25 * nd[:, 0], lam)
    r2 = np.maximum(0.25 * nd[:, 1], lam)

    ar = np.arange(m)
    mutual = phi1[phi1] == ar
    first = mutual & (ar < phi1)
    two_cycles = np.column_stack([ar[first], phi1[first]])
    _, labels = _components(phi1)
    # relabel components by the order of their 2-cycle
    relabel = np.empty(labels.max() + 1, dtype=np.int64)
    relabel[labels[two_cycles[:, 0]]] = np.arange(len(two_cycles))
    comp = relabel[labels]
    indeg = np.bincount(phi1, minlength=m)

    in_pair = mutual & (indeg == 1) & (indeg[phi1] == 1)
    in_dip = in_pair & (q * q[phi1] < 0)
    if m > 2:
        twice = in_dip & in_pair[phi2] & in_pair[phi2[phi1]]
    else:
        twice = np.zeros(m, dtype=bool)
    return GraphDecomposition(
        lam=float(lam),
        charges=q,
        phi1=phi1,
        phi2=phi2,
        dist1=nd[:, 0],
        dist2=nd[:, 1],
        r1=r1,
        r2=r2,
        component_id=comp,
        two_cycles=two_cycles,
        in_degree=indeg,
        in_pair=in_pair,
        in_dip=in_dip,
        twice_isolated=twice,
        d_sums=q + q[phi1],
    )


def r2_of(decomposition: GraphDecomposition, i: int) -> float:
    """Quarter distance to the second nearest neighbour, clamped below by lambda."""
    return float(decomposition.r2[i])


def r_quarter(points, lam=0.0):
    """``(1/4 min_{j != i} |z_j - z_i|) v lam`` for every point."""
    _, d = nearest_neighbours(points, 1)
    return np.maximum(0.25 * d[:, 0], lam)


def r_half(points):
    """``1/2 min_{j != i} |z_j - z_i|``: the radius used when pairing charges around fixed positives."""
    _, d = nearest_neighbours(points, 1)
    return 0.5 * d[:, 0]


def max_in_degree(decomposition: GraphDecomposition) -> int:
    return int(decomposition.in_degree.max())


def max_second_in_degree(decomposition: GraphDecomposition) -> int:
    phi2 = decomposition.phi2
    phi2 = phi2[phi2 >= 0]
    return int(np.bincount(phi2).max()) if len(phi2) else 0


def validate_nn_shape(phi1):
    """Raise :class:`GraphShapeError` unless ``phi1`` is fixed-point free with only 2-cycles."""
    phi1 = np.asarray(phi1, dtype=np.int64)
    m = len(phi1)
    if m < 2 or np.any((phi1 < 0) | (phi1 >= m)):
        raise GraphShapeError("phi1 must map range(m) into itself, m >= 2")
    if np.any(phi1 == np.arange(m)):
        raise GraphShapeError("fixed point in phi1")
    # after m iterations every vertex sits on its component's cycle
    v = np.arange(m)
    for _ in range(m):
        v = phi1[v]
    if np.any(phi1[phi1[v]] != v):
        raise GraphShapeError("a component lacks a 2-cycle")


def dipole_records(config: SignedConfiguration, decomposition: GraphDecomposition):
    """Length and distance-to-boundary of every isolated dipole.

    Returns a structured array with fields ``i``, ``j``, ``length``,
    ``box_distance`` (distance of the dipole midpoint to the box boundary).
    """
    pairs = decomposition.isolated_dipoles()
    out = np.zeros(len(pairs), dtype=[("i", "i8"), ("j", "i8"), ("length", "f8"), ("box_distance", "f8")])
    if len(pairs) == 0:
        return out
    z = config.positions
    a, b = z[pairs[:, 0]], z[pairs[:, 1]]
    mid = 0.5 * (a + b)
    side = config.box_side
    out["i"], out["j"] = pairs[:, 0], pairs[:, 1]
    out["length"] = np.linalg.norm(a - b, axis=1)
    out["box_distance"] = np.min(np.column_stack([mid, side - mid]), axis=1)
    return out


# --------------------------------------------------------------------------- change of variables


@dataclass(frozen=True, eq=False)
class GunsonPantaImage:
    """Per-vertex vectors: ``z_i - z_phi1(i)``, except the reference vertex of each 2-cycle keeps ``z_i``."""

    u: np.ndarray
    reference: np.ndarray  # boolean mask of reference vertices (larger index of each 2-cycle)


def gunson_panta_forward(config: SignedConfiguration, decomposition: GraphDecomposition) -> GunsonPantaImage:
    z = config.positions
    phi1 = decomposition.phi1
    ref = np.zeros(len(z), dtype=bool)
    ref[decomposition.two_cycles[:, 1]] = True
    u = np.where(ref[:, None], z, z - z[phi1])
    return GunsonPantaImage(u=u, reference=ref)


def gunson_panta_inverse(image: GunsonPantaImage, phi1, check_box=False) -> SignedConfiguration:
    """Rebuild positions from difference vectors by walking each tree toward its 2-cycle."""
    phi1 = np.asarray(phi1, dtype=np.int64)
    validate_nn_shape(phi1)
    m = len(phi1)
    ar = np.arange(m)
    expected_ref = (phi1[phi1] == ar) & (ar > phi1)
    if not np.array_equal(expected_ref, image.reference):
        raise GraphShapeError("reference vertices do not match the 2-cycles of phi1")
    z = np.full((m, 2), np.nan)
    z[image.reference] = image.u[image.reference]
    done = image.reference.copy()
    # vertices whose target is known can be placed; repeat until all placed
    while not done.all():
        ready = ~done & done[phi1]
        if not ready.any():
            raise GraphShapeError("unreachable vertices")
        z[ready] = image.u[ready] + z[phi1[ready]]
        done |= ready
    return SignedConfiguration(z, check_box=check_box)
