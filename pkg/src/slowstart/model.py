"""The slow-to-start traffic model.

Cars sit on a Poisson configuration and move right to left at speed 0 or 1.
Two constructions live here: the arrival/departure schedule recursion over a
finite car window, and a naive event-driven simulator of the defining
dynamics used only as a distributional oracle.
"""
from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ParameterError, WindowError
from .rng import RngStream, StreamTag, derive_stream, one_sided_points, sample_exponential, stream_key

log = logging.getLogger(__name__)

FRAMES = ("lattice", "rescaled-supercritical", "rescaled-critical", "continuum")


@dataclass(frozen=True)
class ModelParams:
    lam: float
    window: tuple[float, float] = (-10.0, 10.0)
    horizon: float = 10.0
    palm: bool = False
    seed: int = 0

    def __post_init__(self):
        if not self.lam > 0:
            raise ParameterError(f"lambda must be positive, got {self.lam}")
        if not self.window[0] < self.window[1]:
            raise ParameterError(f"window must satisfy window_lo < window_hi, got {self.window}")
        if not self.horizon > 0:
            raise ParameterError(f"horizon must be positive, got {self.horizon}")

    def extent(self) -> tuple[float, float]:
        """Generation extent given by the window rule."""
        lo, hi = self.window
        return (lo, hi + self.horizon)


@dataclass
class InitialConfig:
    labels: np.ndarray
    positions: np.ndarray
    extent: tuple[float, float]
    palm: bool = False

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.labels.shape != self.positions.shape:
            raise ParameterError("labels and positions differ in length")
        if self.labels.size and np.any(np.diff(self.labels) != 1):
            raise ParameterError("labels must be consecutive")
        if self.positions.size and np.any(np.diff(self.positions) <= 0):
            raise ParameterError("positions must be strictly increasing")

    def __len__(self):
        return int(self.labels.size)

    @property
    def label0(self) -> int:
        return int(self.labels[0]) if len(self) else 0

    def position(self, label: int) -> float:
        return float(self.positions[label - self.label0])

    def has(self, label: int) -> bool:
        return len(self) > 0 and self.label0 <= label <= int(self.labels[-1])

    def labels_in(self, lo: float, hi: float) -> tuple[int, int]:
        """Inclusive label range of cars with position in ``[lo, hi]``; empty if lo > hi."""
        a = int(np.searchsorted(self.positions, lo, side="left"))
        b = int(np.searchsorted(self.positions, hi, side="right")) - 1
        return self.label0 + a, self.label0 + b

    def restrict(self, lo_label: int, hi_label: int) -> InitialConfig:
        a = max(lo_label - self.label0, 0)
        b = min(hi_label - self.label0, len(self) - 1)
        lo = self.extent[0] if a == 0 else float(np.nextafter(self.positions[a - 1], np.inf))
        hi = self.extent[1] if b == len(self) - 1 else float(np.nextafter(self.positions[b + 1], -np.inf))
        return InitialConfig(self.labels[a:b + 1], self.positions[a:b + 1], (lo, hi), self.palm)

    @classmethod
    def from_positions(cls, positions, first_label: int = 0, extent=None) -> InitialConfig:
        positions = np.asarray(positions, dtype=np.float64)
        if extent is None:
            extent = (float(positions[0]), float(positions[-1])) if positions.size else (0.0, 0.0)
        labels = first_label + np.arange(positions.size)
        return cls(labels, positions, extent)


def generate_initial(params: ModelParams, extent: tuple[float, float] | None = None) -> InitialConfig:
    """Poisson(lambda) cars on ``extent`` labelled from the origin.

    Points left and right of the origin come from two one-sided spacing
    streams, so a larger extent only adds cars at the ends and never changes
    labels.  With ``palm`` a car is placed at 0 and takes label 0.
    """
    a, b = params.extent() if extent is None else (float(extent[0]), float(extent[1]))
    if not a < b:
        raise ParameterError(f"extent must satisfy lo < hi, got [{a}, {b}]")
    left = one_sided_points(derive_stream(params.seed, StreamTag("positions-left")), -a, params.lam)
    right = one_sided_points(derive_stream(params.seed, StreamTag("positions-right")), b, params.lam)
    # distances from the origin, nearest first
    lpos = -left
    top_left = -1 if params.palm else 0
    llabels = top_left - np.arange(lpos.size)
    rlabels = 1 + np.arange(right.size)
    labels = [llabels[::-1], rlabels]
    positions = [lpos[::-1], right]
    if params.palm and a <= 0.0 <= b:
        labels.insert(1, np.array([0]))
        positions.insert(1, np.array([0.0]))
    labels = np.concatenate(labels)
    positions = np.concatenate(positions)
    keep = (positions >= a) & (positions <= b)
    return InitialConfig(labels[keep], positions[keep], (a, b), params.palm)


class DepartureClocks:
    """Per-site increasing clocks d_{i,i} < d_{i,i+1} < ..., regenerated on demand.

    ``fixed`` maps a site to the leading clock values of that site (absolute,
    increasing); later clocks continue from the site's own random stream.
    """

    def __init__(self, seed: int, fixed: dict[int, list[float]] | None = None):
        self.seed = int(seed)
        self.base = np.uint64(stream_key(self.seed, StreamTag.clocks()))
        self.fixed = {}
        for site, vals in (fixed or {}).items():
            v = np.asarray(vals, dtype=np.float64)
            if v.size and (v[0] <= 0 or np.any(np.diff(v) <= 0)):
                raise ParameterError(f"fixed clocks of site {site} must be positive and increasing")
            self.fixed[int(site)] = v

    def increments(self, label0: int, n: int) -> np.ndarray:
        """Injected clock increments for sites label0..label0+n-1 (NaN where the stream applies)."""
        sites = [s for s in self.fixed if label0 <= s < label0 + n]
        if not sites:
            return np.empty((0, 0))
        width = max(self.fixed[s].size for s in sites)
        out = np.full((n, width), np.nan)
        for s in sites:
            v = self.fixed[s]
            out[s - label0, :v.size] = np.diff(v, prepend=0.0)
        return out

    def row(self, site: int, n: int) -> np.ndarray:
        """d_{site, site}, ..., d_{site, site+n-1}."""
        site, n = int(site), int(n)
        v = self.fixed.get(site)
        if v is None:
            return _kernels.site_clocks(self.base, site, n)
        key = _kernels.site_key(self.base, site)
        out = np.empty(n)
        acc = 0.0
        for k in range(n):
            acc = v[k] if k < v.size else acc + float(_kernels.qexp(key, k))
            out[k] = acc
        return out

    def get(self, site: int, j: int) -> float:
        if j < site:
            raise ParameterError(f"clock d[{site},{j}] needs j >= i")
        return float(self.row(site, j - site + 1)[-1])


@dataclass
class MarkedPointSet:
    t: float
    positions: np.ndarray
    masses: np.ndarray
    frame: str = "lattice"

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.masses = np.asarray(self.masses, dtype=np.float64)
        if self.frame not in FRAMES:
            raise ParameterError(f"unknown frame {self.frame!r}")
        if self.positions.size and np.any(np.diff(self.positions) <= 0):
            raise ParameterError("positions must be strictly increasing")
        if np.any(self.masses <= 0):
            raise ParameterError("masses must be positive")

    def __len__(self):
        return int(self.positions.size)

    def __eq__(self, other):
        return (isinstance(other, MarkedPointSet) and self.t == other.t and self.frame == other.frame
                and np.array_equal(self.positions, other.positions)
                and np.array_equal(self.masses, other.masses))

    def pairs(self) -> list[tuple[float, float]]:
        return list(zip(self.positions.tolist(), self.masses.tolist()))

    def restrict(self, lo: float, hi: float) -> MarkedPointSet:
        keep = (self.positions >= lo) & (self.positions <= hi)
        return MarkedPointSet(self.t, self.positions[keep], self.masses[keep], self.frame)

    @classmethod
    def empty(cls, t: float = 0.0, frame: str = "lattice") -> MarkedPointSet:
        return cls(t, np.empty(0), np.empty(0), frame)


@dataclass
class ScheduleTable:
    """Arrival/departure times A(i, j), D(i, j) for i_min <= i <= j <= i_max."""

    i_min: int
    i_max: int
    arrivals: np.ndarray
    departures: np.ndarray
    stopped: np.ndarray
    ties: int = 0

    def A(self, i: int, j: int) -> float:
        self._check(i, j)
        return float(self.arrivals[i - self.i_min, j - self.i_min])

    def D(self, i: int, j: int) -> float:
        self._check(i, j)
        return float(self.departures[i - self.i_min, j - self.i_min])

    def is_stopped(self, i: int, j: int) -> bool:
        self._check(i, j)
        return bool(self.stopped[i - self.i_min, j - self.i_min])

    def _check(self, i, j):
        if not self.i_min <= i <= j <= self.i_max:
            raise WindowError(f"entry ({i}, {j}) outside schedule range [{self.i_min}, {self.i_max}]")

    def __len__(self):
        return self.i_max - self.i_min + 1


def build_schedule(config: InitialConfig, clocks: DepartureClocks,
                   car_range: tuple[int, int] | None = None) -> ScheduleTable:
    """Fill the triangular table by the arrival/departure recursion.

    A(i,i) = 0, D(i,i) = d_{i,i}; for j > i, A(i,j) = D(i+1,j) + y_{i+1} - y_i and
    D(i,j) = A(i,j) when the car arrives after car j-1 left (ties count as
    pass-through), else d_{i,j}.
    """
    if car_range is None:
        car_range = (config.label0, config.label0 + len(config) - 1)
    i_min, i_max = car_range
    if i_max < i_min:
        empty = np.empty((0, 0))
        return ScheduleTable(i_min, i_max, empty, empty, np.empty((0, 0), dtype=bool))
    if not (config.has(i_min) and config.has(i_max)):
        raise WindowError(f"car range [{i_min}, {i_max}] not covered by the configuration")
    y = config.positions[i_min - config.label0:i_max - config.label0 + 1]
    A, D, stopped, ties = _kernels.schedule_kernel(np.ascontiguousarray(y), clocks.base, i_min,
                                                clocks.increments(i_min, y.size))
    if ties:
        log.warning("schedule: %d exact arrival/departure ties resolved as pass-through", ties)
    return ScheduleTable(i_min, i_max, A, D, stopped, int(ties))


@dataclass
class TrajectorySample:
    """Piecewise path of one car: rows (t_start, t_end, position_start, speed)."""

    car: int
    segments: list[tuple[float, float, float, int]] = field(default_factory=list)

    def state(self, t: float) -> tuple[float, int]:
        for t0, t1, p0, v in self.segments:
            if t0 <= t < t1:
                return p0 - v * (t - t0), v
        if self.segments and t == self.segments[-1][1]:
            t0, t1, p0, v = self.segments[-1]
            return p0 - v * (t - t0), v
        raise WindowError(f"time {t} outside the trajectory of car {self.car}")


def _certified_upto(config: InitialConfig, schedule: ScheduleTable) -> float:
    """Largest x such that every car with position <= x is inside the schedule range."""
    nxt = schedule.i_max + 1
    if config.has(nxt):
        return float(np.nextafter(config.position(nxt), -np.inf))
    return config.extent[1]


def trajectory(schedule: ScheduleTable, config: InitialConfig, j: int, T: float) -> TrajectorySample:
    """Path of car ``j`` on [0, T]; stopped at y_i on [A(i,j), D(i,j)), moving after."""
    if not schedule.i_min <= j <= schedule.i_max:
        raise WindowError(f"car {j} outside schedule range")
    segs = []
    i = j
    while True:
        a = schedule.A(i, j)
        d = schedule.D(i, j)
        y_i = config.position(i)
        if a >= T:
            break
        if d > a:
            segs.append((a, min(d, T), y_i, 0))
        if d >= T:
            break
        if i > schedule.i_min:
            nxt = schedule.A(i - 1, j)
        elif config.has(i - 1):
            nxt = d + y_i - config.position(i - 1)
            if nxt <= T:
                raise WindowError(f"car {j} reaches car {i - 1}, outside the schedule range, before T={T}")
        else:
            if y_i - (T - d) <= config.extent[0]:
                raise WindowError(f"car {j} may leave the generated extent before T={T}")
            nxt = np.inf
        segs.append((d, min(nxt, T), y_i, 1))
        if nxt >= T:
            break
        i -= 1
    return TrajectorySample(j, segs)


def jam_configuration(schedule: ScheduleTable, config: InitialConfig, t: float,
                      window: tuple[float, float]) -> MarkedPointSet:
    """Jams (y_i, N_i(t)) inside ``window`` with N_i(t) = #{j : A(i,j) <= t < D(i,j)}."""
    lo, hi = window
    if _certified_upto(config, schedule) < hi + t:
        raise WindowError(f"cars up to position {hi + t} are needed for window {window} at t={t}")
    first, last = config.labels_in(lo, hi)
    if len(schedule) and first < schedule.i_min and first <= last:
        raise WindowError(f"window {window} starts below the schedule range")
    pos, mass = [], []
    for i in range(max(first, schedule.i_min), min(last, schedule.i_max) + 1):
        r = i - schedule.i_min
        a = schedule.arrivals[r, r:]
        d = schedule.departures[r, r:]
        n = int(np.count_nonzero((a <= t) & (t < d)))
        if n:
            pos.append(config.position(i))
            mass.append(n)
    return MarkedPointSet(t, np.array(pos), np.array(mass, dtype=float), "lattice")


# ---------------------------------------------------------------------------
# naive event-driven simulator


@dataclass
class CarEvent:
    kind: str  # "start" or "stop"
    time: float
    position: float


def naive_simulate(config: InitialConfig, stream: RngStream, horizon: float) -> dict[int, list[CarEvent]]:
    """Direct simulation of the speed-0/1 dynamics up to ``horizon``.

    A stopped car that is not blocked by its predecessor starts at rate 1; a
    moving car stops on reaching its stopped predecessor.  The leftmost car of
    the configuration has no predecessor.  Returns the event log per label.
    """
    if not horizon > 0:
        raise ParameterError(f"horizon must be positive, got {horizon}")
    n = len(config)
    pos = config.positions.copy()  # position at time last[k]
    last = np.zeros(n)
    speed = np.zeros(n, dtype=np.int8)
    version = np.zeros(n, dtype=np.int64)
    events: dict[int, list[CarEvent]] = {int(l): [] for l in config.labels}
    heap: list = []
    seq = 0

    def now_pos(k, t):
        return pos[k] - speed[k] * (t - last[k])

    def push(t, kind, k):
        nonlocal seq
        heapq.heappush(heap, (t, seq, kind, k, version[k]))
        seq += 1

    for k in range(n):
        push(sample_exponential(stream, 1.0), "start", k)

    while heap:
        t, _, kind, k, ver = heapq.heappop(heap)
        if t > horizon:
            break
        if ver != version[k]:
            continue
        label = int(config.labels[k])
        if kind == "start":
            pos[k] = now_pos(k, t)
            last[k] = t
            speed[k] = 1
            version[k] += 1
            events[label].append(CarEvent("start", t, float(pos[k])))
            if k > 0 and speed[k - 1] == 0:
                push(t + (pos[k] - pos[k - 1]), "arrive", k)
            if k + 1 < n:
                s = k + 1
                if speed[s] == 1:
                    # it can no longer catch up with car k
                    version[s] += 1
                elif pos[s] == pos[k]:
                    push(t + sample_exponential(stream, 1.0), "start", s)
        else:  # arrive
            p = pos[k - 1]
            last[k] = t
            pos[k] = p
            speed[k] = 0
            version[k] += 1
            events[label].append(CarEvent("stop", t, float(p)))
            if k + 1 < n and speed[k + 1] == 1:
                s = k + 1
                push(t + (now_pos(s, t) - p), "arrive", s)
    return events


def replay_jams(config: InitialConfig, events: dict[int, list[CarEvent]], t: float) -> MarkedPointSet:
    """Jam configuration at time ``t`` from a naive event log."""
    stopped: dict[float, int] = {}
    for label, y in zip(config.labels.tolist(), config.positions.tolist()):
        state = ("stop", y)
        for ev in events[label]:
            if ev.time > t:
                break
            state = (ev.kind, ev.position)
        if state[0] == "stop":
            stopped[state[1]] = stopped.get(state[1], 0) + 1
    keys = sorted(stopped)
    return MarkedPointSet(t, np.array(keys), np.array([stopped[k] for k in keys], dtype=float))
