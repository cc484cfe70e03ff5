"""Metropolis-Hastings sampling of the canonical two-component plasma.

Target density on the box ``[0, sqrt(N)]^{2N}``: ``exp(-beta F_lambda)``.

Move types
----------
``single``     one charge, Gaussian step of size ``sigma``
``local``      one charge, Gaussian step of size ``sigma_local * lambda``
``translate``  an isolated dipole, both charges shifted by one Gaussian step
``resample``   an isolated dipole keeps its midpoint; its separation vector is
               redrawn as ``lambda * s`` with ``s`` from the dipole-length law
               and a uniform angle
``teleport``   an isolated dipole keeps its separation vector; its midpoint is
               redrawn uniformly in the box

Dipole moves pick one of the ``n`` isolated dipoles of the current state
uniformly and are only accepted if the moved pair is still an isolated dipole
afterwards, so the acceptance ratio carries the selection factor
``n_old / n_new``.  When there is no isolated dipole the move is rejected
outright.  Out-of-box proposals are rejected.

Random numbers come from ``numpy.random.Generator(PCG64)``; the jitted chain
consumes the same generator object, whose state is stored in checkpoints.
Independent chains use ``SeedSequence(master).spawn(k)``.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numba
import numpy as np

from .configuration import SignedConfiguration, charges_for, energy, in_box, pair_energy, site_energy
from .kernel import DipoleLaw, _g1_eval, default_kernel
from .nngraph import r_half

CHECKPOINT_VERSION = 1
MOVE_NAMES = ("single", "local", "translate", "resample", "teleport")
DEFAULT_WEIGHTS = (0.4, 0.2, 0.2, 0.15, 0.05)
TARGET_ACCEPTANCE = (0.25, 0.40)
TUNE_BLOCK = 2000


class CheckpointError(RuntimeError):
    pass


# --------------------------------------------------------------------------- jitted kernels


@numba.njit(cache=True)
def isolated_dipoles(pos, q, partner):
    """Fill ``partner[i]`` with the other member of ``i``'s isolated dipole, or -1.

    Brute-force nearest neighbours, lowest index on ties.  Returns the number
    of isolated dipoles.
    """
    m = pos.shape[0]
    phi = np.empty(m, np.int64)
    indeg = np.zeros(m, np.int64)
    for i in range(m):
        best = np.inf
        bj = -1
        for j in range(m):
            if j == i:
                continue
            dx = pos[i, 0] - pos[j, 0]
            dy = pos[i, 1] - pos[j, 1]
            d2 = dx * dx + dy * dy
            if d2 < best:
                best = d2
                bj = j
        phi[i] = bj
        indeg[bj] += 1
    count = 0
    for i in range(m):
        j = phi[i]
        if phi[j] == i and indeg[i] == 1 and indeg[j] == 1 and q[i] * q[j] < 0:
            partner[i] = j
            if i < j:
                count += 1
        else:
            partner[i] = -1
    return count


@numba.njit(cache=True)
def law_ppf(u, s_tab, w_tab, body_mass, total, b, s_max):
    """Inverse CDF of the dipole-length law (same arithmetic as ``DipoleLaw.ppf``)."""
    target = u * total
    if target <= body_mass:
        s = np.interp(target, w_tab, s_tab)
    else:
        extra = target - body_mass
        if b == 2.0:
            s = 2.0 * math.exp(extra / (2.0 * math.pi))
        else:
            base = 2.0 ** (2.0 - b) + (2.0 - b) * extra / (2.0 * math.pi)
            s = base ** (1.0 / (2.0 - b)) if base > 0 else np.inf
    if s_max > 0 and s > s_max:
        s = s_max
    return s


@numba.njit(cache=True)
def _pair_delta(pos, q, i, j, ax, ay, bx, by, lam, coef, h):
    # energy change when i -> (ax, ay) and j -> (bx, by)
    log_lam = math.log(lam)
    m = pos.shape[0]
    s = 0.0
    for k in range(m):
        if k == i or k == j:
            continue
        kx = pos[k, 0]
        ky = pos[k, 1]
        gi_new = _g(math.hypot(ax - kx, ay - ky), lam, log_lam, coef, h)
        gi_old = _g(math.hypot(pos[i, 0] - kx, pos[i, 1] - ky), lam, log_lam, coef, h)
        gj_new = _g(math.hypot(bx - kx, by - ky), lam, log_lam, coef, h)
        gj_old = _g(math.hypot(pos[j, 0] - kx, pos[j, 1] - ky), lam, log_lam, coef, h)
        s += q[k] * (q[i] * (gi_new - gi_old) + q[j] * (gj_new - gj_old))
    r_new = math.hypot(ax - bx, ay - by)
    r_old = math.hypot(pos[i, 0] - pos[j, 0], pos[i, 1] - pos[j, 1])
    s += q[i] * q[j] * (_g(r_new, lam, log_lam, coef, h) - _g(r_old, lam, log_lam, coef, h))
    return s


@numba.njit(cache=True)
def _g(r, lam, log_lam, coef, h):
    if r >= 2.0 * lam:
        return -math.log(r)
    return -log_lam + _g1_eval(r / lam, coef, h)


@numba.njit(cache=True)
def _accept(log_ratio, u):
    return log_ratio >= 0.0 or u < math.exp(log_ratio)


@numba.njit(cache=True)
def _kahan_add(e, x):
    y = x - e[1]
    t = e[0] + y
    e[1] = (t - e[0]) - y
    e[0] = t


@numba.njit(cache=True)
def _advance(pos, q, e, nsteps, lam, beta, coef, h, cumw, sig, s_tab, w_tab, body_mass, total, law_b, s_max, side, rng, att, acc):
    m = pos.shape[0]
    partner = np.empty(m, np.int64)
    partner_new = np.empty(m, np.int64)
    n_dip = 0
    dip_valid = False
    for _ in range(nsteps):
        u = rng.random()
        mv = 0
        while mv < 4 and u >= cumw[mv]:
            mv += 1
        att[mv] += 1
        if mv <= 1:
            k = int(rng.random() * m)
            s = sig[mv]
            nx = pos[k, 0] + s * rng.standard_normal()
            ny = pos[k, 1] + s * rng.standard_normal()
            if nx < 0.0 or nx > side or ny < 0.0 or ny > side:
                continue
            d_e = site_energy(pos, q, k, nx, ny, lam, coef, h) - site_energy(pos, q, k, pos[k, 0], pos[k, 1], lam, coef, h)
            if _accept(-beta * d_e, rng.random()):
                pos[k, 0] = nx
                pos[k, 1] = ny
                _kahan_add(e, d_e)
                acc[mv] += 1
                dip_valid = False
            continue
        if not dip_valid:
            n_dip = isolated_dipoles(pos, q, partner)
            dip_valid = True
        if n_dip == 0:
            continue
        pick = int(rng.random() * n_dip)
        i = -1
        for a in range(m):
            if partner[a] > a:
                if pick == 0:
                    i = a
                    break
                pick -= 1
        j = partner[i]
        ix, iy, jx, jy = pos[i, 0], pos[i, 1], pos[j, 0], pos[j, 1]
        log_q = 0.0
        if mv == 2:
            dx = sig[2] * rng.standard_normal()
            dy = sig[2] * rng.standard_normal()
            ax, ay, bx, by = ix + dx, iy + dy, jx + dx, jy + dy
        elif mv == 3:
            mx = 0.5 * (ix + jx)
            my = 0.5 * (iy + jy)
            r_new = lam * law_ppf(rng.random(), s_tab, w_tab, body_mass, total, law_b, s_max)
            th = 2.0 * math.pi * rng.random()
            ux = 0.5 * r_new * math.cos(th)
            uy = 0.5 * r_new * math.sin(th)
            ax, ay, bx, by = mx + ux, my + uy, mx - ux, my - uy
            r_old = math.hypot(ix - jx, iy - jy)
            log_q = beta * (_g1_eval(r_old / lam, coef, h) - _g1_eval(r_new / lam, coef, h))
        else:
            mx = side * rng.random()
            my = side * rng.random()
            hx = 0.5 * (ix - jx)
            hy = 0.5 * (iy - jy)
            ax, ay, bx, by = mx + hx, my + hy, mx - hx, my - hy
        if (
            ax < 0.0 or ax > side or ay < 0.0 or ay > side
            or bx < 0.0 or bx > side or by < 0.0 or by > side
        ):
            continue
        d_e = _pair_delta(pos, q, i, j, ax, ay, bx, by, lam, coef, h)
        pos[i, 0], pos[i, 1], pos[j, 0], pos[j, 1] = ax, ay, bx, by
        n_new = isolated_dipoles(pos, q, partner_new)
        ok = partner_new[i] == j
        if ok:
            log_r = -beta * d_e + log_q + math.log(n_dip / n_new)
            ok = _accept(log_r, rng.random())
        if ok:
            _kahan_add(e, d_e)
            acc[mv] += 1
            partner[:] = partner_new
            n_dip = n_new
        else:
            pos[i, 0], pos[i, 1], pos[j, 0], pos[j, 1] = ix, iy, jx, jy


# --------------------------------------------------------------------------- python-side state


@dataclass
class MoveSpec:
    """Move mix and step sizes.

    ``sigma`` is in box units; ``sigma_local`` and ``sigma_translate`` are in
    units of ``lambda``.  ``sigma=None`` means a tenth of the box side.
    """

    weights: tuple = DEFAULT_WEIGHTS
    sigma: float | None = None
    sigma_local: float = 1.0
    sigma_translate: float = 1.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (5,) or np.any(w < 0) or not math.isclose(w.sum(), 1.0, rel_tol=0, abs_tol=1e-9):
            raise ValueError("move weights must be five nonnegative numbers summing to 1")
        self.weights = tuple(float(x) for x in w)

    @classmethod
    def parse(cls, text, **kw):
        """``"single=0.5,local=0.5"`` style weights; missing types get weight 0."""
        w = dict.fromkeys(MOVE_NAMES, 0.0)
        for item in text.split(","):
            name, _, val = item.partition("=")
            name = name.strip()
            if name not in w:
                raise ValueError(f"unknown move {name!r}")
            w[name] = float(val)
        return cls(tuple(w[n] for n in MOVE_NAMES), **kw)

    def cumulative(self):
        c = np.cumsum(self.weights)
        c[-1] = 1.0 + 1e-12
        return c

    def to_dict(self):
        return {"weights": dict(zip(MOVE_NAMES, self.weights)), "sigma": self.sigma,
                "sigma_local": self.sigma_local, "sigma_translate": self.sigma_translate}

    @classmethod
    def from_dict(cls, d):
        w = d["weights"]
        return cls(tuple(w[n] for n in MOVE_NAMES), d["sigma"], d["sigma_local"], d["sigma_translate"])


@dataclass
class ChainState:
    positions: np.ndarray
    lam: float
    beta: float
    moves: MoveSpec
    rng: np.random.Generator
    energy_cache: np.ndarray  # [value, Kahan compensation]
    step_count: int = 0
    attempts: np.ndarray = field(default_factory=lambda: np.zeros(5, np.int64))
    accepts: np.ndarray = field(default_factory=lambda: np.zeros(5, np.int64))

    @property
    def n(self):
        return self.positions.shape[0] // 2

    @property
    def energy(self):
        return float(self.energy_cache[0])

    @property
    def config(self):
        return SignedConfiguration(self.positions.copy())

    def acceptance(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            rate = self.accepts / self.attempts
        return {n: (int(a), int(b), float(r)) for n, a, b, r in zip(MOVE_NAMES, self.attempts, self.accepts, rate)}

    def check_energy(self, kernel=None):
        """Compare the cached energy with a full recomputation (tolerance ``2N * 1e-9``)."""
        full = energy(self.config, self.lam, kernel)
        err = abs(full - self.energy)
        if err > 2 * self.n * 1e-9:
            raise RuntimeError(f"energy cache drifted by {err:.3g}")
        return err


def new_state(config: SignedConfiguration, lam, beta, moves=None, seed=None, rng=None, kernel=None):
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(seed))
    e = energy(config, lam, kernel)
    return ChainState(np.array(config.positions, dtype=np.float64), float(lam), float(beta), moves or MoveSpec(), rng,
                      np.array([e, 0.0]))


def _sigmas(state):
    mv = state.moves
    side = math.sqrt(state.n)
    sigma = 0.1 * side if mv.sigma is None else mv.sigma
    return np.array([sigma, mv.sigma_local * state.lam, mv.sigma_translate * state.lam])


_LAW_CACHE: dict = {}


_NO_LAW = (np.zeros(2), np.zeros(2), 0.0, 1.0, 3.0, -1.0)


def _law_for(state, law):
    if law is not None:
        return law.jit_tables()
    if state.moves.weights[3] == 0.0:
        return _NO_LAW
    key = (state.beta, state.lam, state.n)
    if key not in _LAW_CACHE:
        if len(_LAW_CACHE) > 256:
            _LAW_CACHE.clear()
        _LAW_CACHE[key] = default_law(*key).jit_tables()
    return _LAW_CACHE[key]


def default_law(beta, lam, n):
    """Dipole-length law for the resample move; truncated at the box diagonal in units of ``lambda``."""
    s_max = math.sqrt(2.0 * n) / lam
    return DipoleLaw(beta, s_max=s_max) if beta <= 2 else DipoleLaw(beta)


def advance(state: ChainState, nsteps: int, law=None, kernel=None):
    """Run ``nsteps`` MH steps in place."""
    if nsteps <= 0:
        return state
    k = kernel or default_kernel()
    s_tab, w_tab, body, total, b, s_max = _law_for(state, law)
    _advance(
        state.positions, charges_for(state.n), state.energy_cache, int(nsteps), state.lam, state.beta,
        k.coef, k.table_spacing, state.moves.cumulative(), _sigmas(state),
        s_tab, w_tab, body, total, b, s_max, math.sqrt(state.n), state.rng, state.attempts, state.accepts,
    )
    state.step_count += int(nsteps)
    return state


def step(state: ChainState, moves=None, lam=None, beta=None, law=None, kernel=None):
    """One MH step; optional arguments override the state's parameters."""
    if moves is not None:
        state.moves = moves
    if lam is not None and lam != state.lam:
        state.lam = float(lam)
        state.energy_cache[:] = (energy(state.config, lam, kernel), 0.0)
    if beta is not None:
        state.beta = float(beta)
    return advance(state, 1, law, kernel)


def tune(state: ChainState, burnin: int, law=None, kernel=None, block=TUNE_BLOCK):
    """Burn-in with step-size adaptation toward 25-40% acceptance, then freeze.

    Only the three Gaussian step sizes are adapted.  Returns the number of
    steps taken (``burnin``).
    """
    done = 0
    side = math.sqrt(state.n)
    lo_t, hi_t = TARGET_ACCEPTANCE
    mv = state.moves
    while done < burnin:
        nb = min(block, burnin - done)
        a0, c0 = state.attempts.copy(), state.accepts.copy()
        advance(state, nb, law, kernel)
        done += nb
        att = state.attempts - a0
        rate = np.where(att > 0, (state.accepts - c0) / np.maximum(att, 1), np.nan)
        sig = _sigmas(state)
        for k in range(3):
            if att[k] < 20 or np.isnan(rate[k]):
                continue
            factor = 1.0
            if rate[k] < lo_t:
                factor = max(0.5, rate[k] / lo_t + 0.1)
            elif rate[k] > hi_t:
                factor = min(2.0, rate[k] / hi_t + 0.1)
            sig[k] = min(sig[k] * factor, side)
        mv.sigma = float(sig[0])
        mv.sigma_local = float(sig[1] / state.lam)
        mv.sigma_translate = float(sig[2] / state.lam)
    return done


# --------------------------------------------------------------------------- runs


@dataclass
class Schedule:
    burnin: int = 0
    steps: int = 0
    stride: int = 1000
    seed: int = 0
    tune: bool = True


@dataclass
class Snapshot:
    step: int
    positions: np.ndarray
    energy: float


@dataclass
class RunResult:
    snapshots: list
    state: ChainState
    lam: float
    beta: float
    moves_after_tuning: dict


def run(config0: SignedConfiguration, lam, beta, schedule: Schedule, moves=None, law=None, kernel=None,
        checkpoint_path=None, state=None) -> RunResult:
    """Burn in (with tuning), then record a snapshot every ``stride`` steps.

    The trace holds the post-burn-in initial snapshot plus one per stride.
    Passing ``state`` resumes an existing chain instead of starting from
    ``config0``.
    """
    if state is None:
        state = new_state(config0, lam, beta, moves=MoveSpec(**(moves.__dict__)) if moves else None, seed=schedule.seed,
                          kernel=kernel)
        if schedule.burnin > 0:
            if schedule.tune:
                tune(state, schedule.burnin, law, kernel)
            else:
                advance(state, schedule.burnin, law, kernel)
        state.step_count = 0
        state.attempts[:] = 0
        state.accepts[:] = 0
    start = state.step_count
    snaps = [Snapshot(state.step_count, state.positions.copy(), state.energy)]
    done = 0
    while done < schedule.steps:
        nb = min(schedule.stride, schedule.steps - done)
        advance(state, nb, law, kernel)
        done += nb
        state.check_energy(kernel)
        snaps.append(Snapshot(state.step_count, state.positions.copy(), state.energy))
        if checkpoint_path is not None:
            write_checkpoint(state, checkpoint_path)
    if checkpoint_path is not None and schedule.steps == 0:
        write_checkpoint(state, checkpoint_path)
    assert state.step_count - start == schedule.steps
    return RunResult(snaps, state, float(lam), float(beta), state.moves.to_dict())


def spawn_seeds(master_seed, count):
    """Per-chain integer seeds: the first word of ``SeedSequence(master).spawn(count)[k]``."""
    return [int(s.generate_state(1, np.uint64)[0]) for s in np.random.SeedSequence(master_seed).spawn(count)]


def resample_proposal_density(law, lam, u):
    """Density (w.r.t. Lebesgue measure in the plane) of the separation vector proposed by the resample move."""
    u = np.asarray(u, dtype=float)
    r = np.hypot(u[..., 0], u[..., 1])
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(r > 0, law.pdf(r / lam) / (2.0 * math.pi * r * lam), 0.0)


def resample_log_ratio(beta, lam, r_old, r_new, kernel=None):
    """Log proposal ratio ``q(reverse) / q(forward)`` of the resample move."""
    k = kernel or default_kernel()
    return beta * (float(k.g1(r_old / lam)) - float(k.g1(r_new / lam)))


# --------------------------------------------------------------------------- initial states


def init_uniform(rng, n):
    return SignedConfiguration(rng.uniform(0.0, math.sqrt(n), (2 * n, 2)))


def init_paired(rng, n, lam, beta, law=None, max_tries=100):
    """Uniform positives; each negative at distance ``min(lambda s, r(x_i)/2)`` from its positive.

    ``s`` is drawn from the dipole-length law and ``r(x_i)`` is half the
    distance from ``x_i`` to the nearest other positive, so every pair is a
    mutual nearest-neighbour pair.  Angles (then lengths) are redrawn until
    the negative charge lands in the box.
    """
    law = law or default_law(beta, lam, n)
    side = math.sqrt(n)
    x = rng.uniform(0.0, side, (n, 2))
    r = r_half(x) if n > 1 else np.array([np.inf])
    y = np.empty_like(x)
    for i in range(n):
        for attempt in range(max_tries):
            d = min(lam * float(law.ppf(rng.random())), 0.5 * r[i])
            th = rng.uniform(0.0, 2.0 * math.pi)
            cand = x[i] + d * np.array([math.cos(th), math.sin(th)])
            if in_box(cand, side):
                break
        else:
            cand = np.clip(cand, 0.0, side)
        y[i] = cand
    return SignedConfiguration.from_pairs(x, y)


# --------------------------------------------------------------------------- checkpoints


def _atomic_write_text(path, text):
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def checkpoint_dict(state: ChainState):
    return {
        "version": CHECKPOINT_VERSION,
        "n": state.n,
        "lambda": state.lam,
        "beta": state.beta,
        "step": state.step_count,
        "positions": [[float(f"{v:.17g}") for v in row] for row in state.positions],
        "charges": [int(c) for c in charges_for(state.n)],
        "energy_cache": [float(state.energy_cache[0]), float(state.energy_cache[1])],
        "rng_state": state.rng.bit_generator.state,
        "acceptance_counters": {n: [int(a), int(b)] for n, a, b in zip(MOVE_NAMES, state.attempts, state.accepts)},
        "moves": state.moves.to_dict(),
    }


def write_checkpoint(state: ChainState, path):
    try:
        _atomic_write_text(path, json.dumps(checkpoint_dict(state)))
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc


def read_checkpoint(path) -> ChainState:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if d.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError("unsupported checkpoint version")
    pos = np.array(d["positions"], dtype=np.float64)
    if list(d["charges"]) != [int(c) for c in charges_for(d["n"])]:
        raise CheckpointError("charges do not follow the +1 then -1 layout")
    bitgen = np.random.PCG64()
    bitgen.state = d["rng_state"]
    st = ChainState(pos, d["lambda"], d["beta"], MoveSpec.from_dict(d["moves"]), np.random.Generator(bitgen),
                    np.array(d["energy_cache"], dtype=np.float64), d["step"])
    for k, name in enumerate(MOVE_NAMES):
        st.attempts[k], st.accepts[k] = d["acceptance_counters"][name]
    return st


# --------------------------------------------------------------------------- discrete toy for exact detailed balance


def toy_transition_matrix(grid, lam, beta, kernel=None):
    """Exact MH transition matrix of one +/- pair on a finite set of sites.

    States are ``(site of +, site of -)``.  Two move types, chosen with
    probability 1/2 each:

    * pick one charge uniformly and propose a uniformly chosen other site
      (symmetric);
    * keep the positive charge and propose the negative one on site ``b``
      with probability proportional to ``w(b) = exp(beta g1(|a - b| / lambda))``
      (the discrete analogue of the resample move, with its proposal ratio).

    Returns ``(P, pi)`` with ``pi`` the normalised Gibbs weights.
    """
    k = kernel or default_kernel()
    grid = np.asarray(grid, dtype=float)
    s = len(grid)
    states = [(a, b) for a in range(s) for b in range(s)]
    idx = {st: i for i, st in enumerate(states)}

    def f(a, b):
        cfg = SignedConfiguration(np.array([grid[a], grid[b]]), check_box=False)
        return energy(cfg, lam, k)

    def w(a, b):
        return math.exp(beta * k.g1(np.linalg.norm(grid[a] - grid[b]) / lam))

    ns = len(states)
    P = np.zeros((ns, ns))
    for (a, b), i in idx.items():
        fa = f(a, b)
        for c in range(s):
            if c != a:
                j = idx[(c, b)]
                P[i, j] += 0.5 * 0.5 / (s - 1) * min(1.0, math.exp(-beta * (f(c, b) - fa)))
            if c != b:
                j = idx[(a, c)]
                P[i, j] += 0.5 * 0.5 / (s - 1) * min(1.0, math.exp(-beta * (f(a, c) - fa)))
        z = sum(w(a, c) for c in range(s))
        for c in range(s):
            if c == b:
                continue
            j = idx[(a, c)]
            q_fwd = w(a, c) / z
            q_rev = w(a, b) / z
            P[i, j] += 0.5 * q_fwd * min(1.0, math.exp(-beta * (f(a, c) - fa)) * q_rev / q_fwd)
        P[i, i] = 1.0 - P[i].sum()
    e = np.array([f(a, b) for a, b in states])
    pi = np.exp(-beta * (e - e.min()))
    return P, pi / pi.sum()
