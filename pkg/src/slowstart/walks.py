"""Coalescing counting walks reflected from above by the car-counting path.

Walk B^i sits at level i left of y_i, then jumps +1 at the points
y_i + d_{i,j} until it meets B^{i+1}, and follows B^{i+1} from then on.  The
walks are built right to left.  Each walk keeps only its own jump locations
plus a coalescence link, so storage is linear in the clock marks consumed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DomainError, WindowError
from .model import DepartureClocks, InitialConfig, MarkedPointSet, ScheduleTable


@dataclass
class WalkFamily:
    label0: int
    positions: np.ndarray  # y of walks label0..top_label, then the ceiling car (or +inf)
    cutoff: float  # leave times T(i, j), j <= top_label, are exact below this
    domain: float  # level queries are exact below this (cutoff capped by the ceiling car)
    start: np.ndarray
    count: np.ndarray
    merged: np.ndarray
    skip: np.ndarray
    jumps: np.ndarray
    ties: int = 0
    extent_lo: float = -np.inf

    @property
    def n(self) -> int:
        return int(self.count.shape[0] - 1)

    @property
    def top_label(self) -> int:
        return self.label0 + self.n - 1

    def _args(self):
        return (self.positions, self.start, self.count, self.merged, self.skip, self.jumps)

    def _offset(self, label: int) -> int:
        m = label - self.label0
        if not 0 <= m <= self.n:
            raise DomainError(f"walk {label} outside family [{self.label0}, {self.top_label + 1}]")
        return m

    def Y(self, x: float) -> int:
        """Counting path: the label of the first car strictly right of x."""
        if x >= self.domain:
            raise DomainError(f"x={x} beyond the level domain {self.domain}")
        k = int(np.searchsorted(self.positions, x, side="right"))
        if k == 0 and x < self.extent_lo:
            raise DomainError(f"x={x} below the generated extent")
        return self.label0 + k

    def B(self, label: int, x: float) -> int:
        """Level of walk ``label`` at x."""
        if x >= self.domain:
            raise DomainError(f"x={x} beyond the level domain {self.domain}")
        m = self._offset(label)
        return self.label0 + int(_kernels.level_query(m, float(x), *self._args()))

    def own_jumps(self, label: int) -> np.ndarray:
        m = self._offset(label)
        if m == self.n:
            return np.empty(0)
        s = self.start[m]
        return self.jumps[s:s + self.count[m]]

    def link(self, label: int) -> int | None:
        """Label of the walk that ``label`` coalesces with, or None if it does not within the domain."""
        m = self._offset(label)
        if m == self.n or not self.merged[m]:
            return None
        return label + 1

    def coalescence_point(self, label: int) -> float | None:
        if self.link(label) is None:
            return None
        return float(self.own_jumps(label)[-1])


def build_walks(config: InitialConfig, clocks: DepartureClocks, cutoff: float,
                top_label: int | None = None) -> WalkFamily:
    """Build B^i for every car with position <= cutoff (and label <= top_label).

    The first car above the included ones acts as a constant ceiling walk.
    Level queries are exact for x below ``cutoff`` and below the ceiling car;
    leave times T(i, j) are exact for j <= top_label whenever they fall below
    the cutoff.
    """
    if len(config) == 0 or config.positions[0] > cutoff:
        top = min(cutoff, config.extent[1])
        return WalkFamily(config.label0, np.array([np.inf]), top, top,
                          np.zeros(1, np.int64), np.zeros(1, np.int64), np.zeros(1, bool),
                          np.zeros(1, np.int64), np.empty(0), 0, config.extent[0])
    k = int(np.searchsorted(config.positions, cutoff, side="right"))
    if top_label is not None:
        k = min(k, top_label - config.label0 + 1)
    y = np.ascontiguousarray(config.positions[:k])
    if k < len(config):
        ceiling = float(config.positions[k])
        domain = min(cutoff, ceiling)
    else:
        ceiling = np.inf
        domain = min(cutoff, config.extent[1])
    start, count, merged, skip, jumps, ties = _kernels.build_walks_kernel(
        y, clocks.base, config.label0, float(cutoff), clocks.increments(config.label0, k))
    return WalkFamily(config.label0, np.append(y, ceiling), float(min(cutoff, config.extent[1])),
                      float(domain), start, count,
                      merged, skip, jumps, int(ties), config.extent[0])


class LeaveTimes:
    """T(i, j): where walk i leaves level j; T(i, i-1) = y_i."""

    def __init__(self, walks: WalkFamily):
        self.walks = walks

    def __call__(self, i: int, j: int) -> float:
        w = self.walks
        m = w._offset(i)
        if j < i - 1:
            raise DomainError(f"T({i}, {j}) needs j >= i - 1")
        if j > w.top_label:
            raise DomainError(f"T({i}, {j}): level above the top walk {w.top_label}")
        val = float(_kernels.t_query(m, j - w.label0, *w._args()))
        if not np.isfinite(val):
            raise DomainError(f"T({i}, {j}) lies beyond the cutoff")
        return val

    def table(self) -> np.ndarray:
        """Dense T(i, j) over the family, NaN below the diagonal, inf beyond the cutoff."""
        return _kernels.t_table(*self.walks._args())


def leave_times(walks: WalkFamily) -> LeaveTimes:
    return LeaveTimes(walks)


def jams_from_walks(walks: WalkFamily, config: InitialConfig, t: float,
                    window: tuple[float, float]) -> MarkedPointSet:
    """Jams at time t: mass at y_i is B^{i+1}_{y_i+t} - B^i_{y_i+t}."""
    lo, hi = window
    a = int(np.searchsorted(walks.positions[:-1], lo, side="left"))
    b = int(np.searchsorted(walks.positions[:-1], hi, side="right"))
    if hi + t > walks.domain or (b > a and walks.positions[b - 1] + t >= walks.domain):
        raise DomainError(f"level domain {walks.domain} insufficient for window {window} at t={t}")
    if a == 0 and lo < walks.extent_lo and b > 0:
        raise DomainError(f"window {window} starts below the generated extent")
    if b <= a:
        return MarkedPointSet.empty(t)
    masses = _kernels.jams_kernel(a, b, float(t), *walks._args())
    keep = masses > 0
    return MarkedPointSet(t, walks.positions[a:b][keep], masses[keep].astype(float), "lattice")


def car_state(walks: WalkFamily, j: int, t: float) -> tuple[float, int]:
    """(position, speed) of car j at time t, read off the leave times."""
    if j > walks.top_label:
        raise DomainError(f"car {j} above the top walk")
    m = walks._offset(j)
    i, pos, speed, status = _kernels.car_state(m, float(t), 0, *walks._args())
    if status and pos <= walks.extent_lo:
        raise WindowError(f"car {j} may have left the generated extent by t={t}")
    if speed == 1 and not np.isfinite(pos):
        raise DomainError(f"car {j} state at t={t} beyond the cutoff")
    if speed == 0 and t + float(walks.positions[i]) >= walks.cutoff:
        raise DomainError(f"car {j} state at t={t} beyond the cutoff")
    return float(pos), int(speed)


def stopped_at(walks: WalkFamily, j: int, t: float) -> int | None:
    """Label of the jam holding car j at time t, or None if it is moving."""
    m = walks._offset(j)
    i, pos, speed, status = _kernels.car_state(m, float(t), 0, *walks._args())
    if status and pos <= walks.extent_lo:
        raise WindowError(f"car {j} may have left the generated extent by t={t}")
    return None if speed else walks.label0 + int(i)


def moving_positions(walks: WalkFamily, t: float, window: tuple[float, float]) -> np.ndarray:
    """Sorted positions of moving cars inside ``window`` at time t."""
    lo, hi = window
    ys = walks.positions[:-1]
    # cell (y_{i-1}, y_i] hosts moving cars read off walk i
    a = int(np.searchsorted(ys, lo, side="left"))
    b = int(np.searchsorted(ys, hi, side="left")) + 1
    if a == 0:
        raise DomainError("need a car below the window to read moving cars")
    b = min(b, walks.n)
    if ys[b - 1] + t >= walks.domain:
        raise DomainError(f"level domain {walks.domain} insufficient for window {window} at t={t}")
    pts = np.sort(_kernels.moving_kernel(a, b, float(t), *walks._args()))
    return pts[(pts >= lo) & (pts <= hi)]


@dataclass
class EquivalenceReport:
    entries: int
    violations: int
    max_discrepancy: float
    first_violations: list

    @property
    def ok(self) -> bool:
        return self.violations == 0


def check_equivalence(schedule: ScheduleTable, leave: LeaveTimes, config: InitialConfig) -> EquivalenceReport:
    """Compare A(i,j) = T(i+1,j) - y_i (i < j), A(i,i) = 0 and D(i,j) = T(i,j) - y_i exactly."""
    n = len(schedule)
    if n == 0:
        return EquivalenceReport(0, 0, 0.0, [])
    w = leave.walks
    off = schedule.i_min - w.label0
    if off < 0 or schedule.i_max > w.top_label:
        raise DomainError("walk family does not cover the schedule range")
    T = leave.table()[off:off + n, off:off + n]
    y = config.positions[schedule.i_min - config.label0:schedule.i_max - config.label0 + 1]
    upper = np.triu(np.ones((n, n), dtype=bool))
    want_D = T - y[:, None]
    want_A = np.full((n, n), np.nan)
    want_A[:-1, :] = T[1:, :] - y[:-1, None]
    np.fill_diagonal(want_A, 0.0)
    bad_A = (schedule.arrivals != want_A) & upper
    bad_D = (schedule.departures != want_D) & upper
    bad = bad_A | bad_D
    entries = int(upper.sum()) * 2
    if not bad.any():
        return EquivalenceReport(entries, 0, 0.0, [])
    with np.errstate(invalid="ignore"):
        disc = np.nanmax(np.concatenate([np.abs(schedule.arrivals - want_A)[bad_A],
                                         np.abs(schedule.departures - want_D)[bad_D]]))
    if not np.isfinite(disc):
        disc = np.inf
    ii, jj = np.nonzero(bad)
    where = [(int(schedule.i_min + i), int(schedule.i_min + j)) for i, j in zip(ii[:10], jj[:10])]
    return EquivalenceReport(entries, int(bad_A.sum() + bad_D.sum()), float(disc), where)


def walks_rows(walks: WalkFamily) -> list[tuple[int, float, int | None, float | None]]:
    """Rows (walk_label, jump_location, coalesces_with, coalescence_location) for walks.csv."""
    rows = []
    for m in range(walks.n):
        label = walks.label0 + m
        link = walks.link(label)
        cp = walks.coalescence_point(label)
        for x in walks.own_jumps(label):
            rows.append((label, float(x), link, cp))
    return rows
