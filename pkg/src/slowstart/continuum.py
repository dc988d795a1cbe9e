"""Grid simulators of the two continuum limit objects.

* coalescing Brownian motions started from every grid point at time 0;
  boundaries between surviving classes, marked by the gap between class
  values (supercritical limit);
* Brownian paths started on a driving Brownian path W at their own start
  time, reflected below W and coalescing; a boundary at y is read at time
  y + t (critical limit).

Paths take Euler steps of variance dt.  Adjacent paths merge the first step
their order reverses or they meet; the merged value is their mean.  Paths are
kept as an ordered stack of classes, each class a contiguous run of starters;
after a merge the class moves with the increments of its coarsest-grid
starter, which couples a grid to its halving path by path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ._kernels import normal, site_key
from .errors import DomainError, ParameterError
from .model import MarkedPointSet
from .rng import RngStream, StreamTag, stream_key


@dataclass(frozen=True)
class GridParams:
    extent: tuple[float, float]
    h: float
    dt: float
    t: float = 1.0

    def __post_init__(self):
        a, b = self.extent
        if not a < b:
            raise ParameterError(f"extent must satisfy lo < hi, got {self.extent}")
        if not self.h > 0 or not self.dt > 0 or not self.t > 0:
            raise ParameterError("h, dt and t must be positive")
        if self.dt > self.h ** 2 * (1 + 1e-12):
            raise ParameterError(f"resolution rule violated: dt={self.dt} > h^2={self.h ** 2}")

    @property
    def n_starters(self) -> int:
        a, b = self.extent
        return int(math.floor((b - a) / self.h + 1e-9)) + 1

    @property
    def steps_per_starter(self) -> int:
        return int(math.ceil(self.h / self.dt - 1e-9))

    @property
    def dt_eff(self) -> float:
        """Time step actually used: h split into a whole number of steps."""
        return self.h / self.steps_per_starter

    def halved(self) -> GridParams:
        return GridParams(self.extent, self.h / 2, self.dt / 2, self.t)


@dataclass
class ContinuumWeb:
    """Boundary records of one oracle run.

    ``alive[q, k]`` says whether starters k and k+1 are in distinct classes at
    evaluation time ``times[q]`` (critical: at time x_k + h/2 + t); ``gap`` holds
    the value difference across that boundary.
    """

    starters: np.ndarray
    times: np.ndarray
    alive: np.ndarray
    gap: np.ndarray
    max_excess: float = -np.inf  # max over steps and paths of value - W (critical only)
    driving: np.ndarray | None = None

    def points(self, q: int, frame: str = "continuum") -> MarkedPointSet:
        h = self.starters[1] - self.starters[0] if self.starters.size > 1 else 0.0
        ks = np.flatnonzero(self.alive[q])
        return MarkedPointSet(float(self.times[q]), self.starters[ks] + h / 2, self.gap[q, ks], frame)


@njit(cache=True, nogil=True, inline="always")
def _coarser(a, b, sub):
    """Starter whose increments a merged class keeps: the one present on the coarsest grid."""
    if a == 0 or b == 0:
        return 0
    za = 0
    x = a * sub
    while x % 2 == 0:
        x //= 2
        za += 1
    zb = 0
    x = b * sub
    while x % 2 == 0:
        x //= 2
        zb += 1
    if za > zb or (za == zb and a < b):
        return a
    return b


@njit(cache=True, nogil=True, inline="always")
def _merge_pass(val, root, own, P, alive, sub):
    out = 0
    for p in range(P):
        val[out] = val[p]
        root[out] = root[p]
        own[out] = own[p]
        out += 1
        while out >= 2 and val[out - 2] >= val[out - 1]:
            alive[root[out - 1] - 1] = False
            val[out - 2] = 0.5 * (val[out - 2] + val[out - 1])
            own[out - 2] = _coarser(own[out - 2], own[out - 1], sub)
            out -= 1
    return out


@njit(cache=True, nogil=True, inline="always")
def _incr(key, s, sub):
    # step s aggregates the fine counters (s-1)*sub+1 .. s*sub
    acc = 0.0
    for u in range((s - 1) * sub + 1, s * sub + 1):
        acc += normal(key, u)
    return acc / math.sqrt(sub)


@njit(cache=True, nogil=True)
def _arratia_kernel(z, dt, tsteps, key, sub):
    K = z.shape[0]
    Q = tsteps.shape[0]
    val = z.copy()
    root = np.arange(K)
    own = np.arange(K)
    alive = np.ones(max(K - 1, 0), dtype=np.bool_)
    rec_alive = np.zeros((Q, max(K - 1, 0)), dtype=np.bool_)
    rec_gap = np.zeros((Q, max(K - 1, 0)))
    pos = np.zeros(K, dtype=np.int64)
    P = K
    sd = math.sqrt(dt)
    keys = np.empty(K, dtype=np.uint64)
    for k in range(K):
        keys[k] = site_key(key, k * sub + 1)
    nmax = tsteps.max()
    for s in range(1, nmax + 1):
        for p in range(P):
            val[p] += sd * _incr(keys[own[p]], s, sub)
        P = _merge_pass(val, root, own, P, alive, sub)
        for q in range(Q):
            if tsteps[q] == s:
                for p in range(P):
                    pos[root[p]] = p
                for k in range(K - 1):
                    if alive[k]:
                        rec_alive[q, k] = True
                        p = pos[k + 1]
                        rec_gap[q, k] = val[p] - val[p - 1]
    return rec_alive, rec_gap


@njit(cache=True, nogil=True)
def _reflected_kernel(K, per, dt, tsteps, keyW, key, keep_w, sub):
    """Starter k begins at step k*per on W; pair k is read at step k*per + per//2 + tsteps[q]."""
    Q = tsteps.shape[0]
    half = per // 2
    nsteps = (K - 1) * per + half + tsteps.max()
    sd = math.sqrt(dt)
    val = np.empty(K)
    root = np.empty(K, dtype=np.int64)
    own = np.empty(K, dtype=np.int64)
    alive = np.ones(max(K - 1, 0), dtype=np.bool_)
    rec_alive = np.zeros((Q, max(K - 1, 0)), dtype=np.bool_)
    rec_gap = np.zeros((Q, max(K - 1, 0)))
    pos = np.full(K, -1, dtype=np.int64)
    keys = np.empty(K, dtype=np.uint64)
    for k in range(K):
        keys[k] = site_key(key, k * sub + 1)
    wpath = np.zeros(nsteps + 1 if keep_w else 1)
    w = 0.0
    P = 1
    val[0] = 0.0
    root[0] = 0
    own[0] = 0
    started = 1
    max_excess = -np.inf
    for s in range(1, nsteps + 1):
        w += sd * _incr(keyW, s, sub)
        if keep_w:
            wpath[s] = w
        for p in range(P):
            v = val[p] + sd * _incr(keys[own[p]], s, sub)
            if v > w:
                v = w
            val[p] = v
        if started < K and s == started * per:
            val[P] = w
            root[P] = started
            own[P] = started
            P += 1
            started += 1
        for p in range(P):
            if val[p] - w > max_excess:
                max_excess = val[p] - w
        P = _merge_pass(val, root, own, P, alive, sub)
        r = s - half
        for q in range(Q):
            kk = r - tsteps[q]
            if kk >= 0 and kk % per == 0:
                k = kk // per
                if k < K - 1 and alive[k]:
                    for p in range(P):
                        pos[root[p]] = p
                    p = pos[k + 1]
                    rec_alive[q, k] = True
                    rec_gap[q, k] = val[p] - val[p - 1]
    return rec_alive, rec_gap, max_excess, wpath


def _keys(seed) -> tuple[np.uint64, np.uint64]:
    if isinstance(seed, RngStream):
        seed = seed.seed
    return (np.uint64(stream_key(seed, StreamTag.oracle(0))),
            np.uint64(stream_key(seed, StreamTag.oracle(1))))


def _tsteps(grid: GridParams, times) -> np.ndarray:
    times = np.atleast_1d(np.asarray(grid.t if times is None else times, dtype=float))
    if np.any(times <= 0):
        raise ParameterError("evaluation times must be positive")
    return times, np.rint(times / grid.dt_eff).astype(np.int64)


def run_coalescing_bm(grid: GridParams, seed, times=None, level: int = 0) -> ContinuumWeb:
    """Run the free coalescing family.

    ``level`` couples resolutions: a run at level l reuses the Brownian
    increments of a level-0 run on the grid refined l times (h and dt halved
    per level), so a grid and its halving see the same paths.
    """
    times, ts = _tsteps(grid, times)
    a, _ = grid.extent
    z = a + grid.h * np.arange(grid.n_starters)
    _, key = _keys(seed)
    alive, gap = _arratia_kernel(z, grid.dt_eff, ts, key, 1 << level)
    return ContinuumWeb(z, times, alive, gap)


def run_reflected_web(grid: GridParams, seed, times=None, keep_driving: bool = False,
                      level: int = 0) -> ContinuumWeb:
    times, ts = _tsteps(grid, times)
    a, _ = grid.extent
    K = grid.n_starters
    x = a + grid.h * np.arange(K)
    keyW, key = _keys(seed)
    alive, gap, excess, wpath = _reflected_kernel(K, grid.steps_per_starter, grid.dt_eff, ts, keyW, key,
                                                  keep_driving, 1 << level)
    return ContinuumWeb(x, times, alive, gap, float(excess), wpath if keep_driving else None)


def simulate_coalescing_bm(grid: GridParams, seed) -> MarkedPointSet:
    """Class boundaries and value gaps of coalescing Brownian motions at time ``grid.t``."""
    return run_coalescing_bm(grid, seed).points(0)


def simulate_reflected_web(grid: GridParams, seed, domain_hi: float | None = None) -> MarkedPointSet:
    """Boundaries y of the reflected coalescing web, each read at time y + t."""
    if domain_hi is not None and grid.extent[1] + grid.t > domain_hi:
        raise DomainError(f"evaluation coordinate {grid.extent[1] + grid.t} exceeds simulated range {domain_hi}")
    return run_reflected_web(grid, seed).points(0)


@dataclass
class Functionals:
    count: int
    total_mass: float
    max_mass: float
    spacings: np.ndarray

    def as_tuple(self):
        return (self.count, self.total_mass, self.max_mass, self.spacings.tolist())


FUNCTIONAL_NAMES = ("count", "total_mass", "max_mass")


def extract_functionals(mps: MarkedPointSet, window: tuple[float, float]) -> Functionals:
    r = mps.restrict(*window)
    if len(r) == 0:
        return Functionals(0, 0.0, 0.0, np.empty(0))
    return Functionals(len(r), float(r.masses.sum()), float(r.masses.max()), np.diff(r.positions))
