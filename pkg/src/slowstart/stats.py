"""Monte Carlo estimators and tests on top of the walk representation.

Every estimator runs a replica farm: replica r draws all its randomness from
``replica_seed(seed, r)``, and results are gathered in replica order, so the
output does not depend on the number of worker threads.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from . import continuum as cont
from .errors import DomainError, ParameterError
from .model import DepartureClocks, InitialConfig, MarkedPointSet, ModelParams, generate_initial
from .rng import RngStream, StreamTag, quantize, replica_seed
from .walks import build_walks, car_state, jams_from_walks, leave_times, moving_positions, stopped_at

CI_WIDTH = 3.0


# ---------------------------------------------------------------------------
# result types


@dataclass
class EstimateWithCI:
    estimate: float
    se: float
    replicas: int
    tag: str = ""

    def __post_init__(self):
        if not self.se >= 0:
            raise ParameterError(f"standard error must be >= 0, got {self.se}")

    @property
    def ci(self) -> tuple[float, float]:
        return (self.estimate - CI_WIDTH * self.se, self.estimate + CI_WIDTH * self.se)

    def covers(self, value: float) -> bool:
        lo, hi = self.ci
        return lo <= value <= hi

    @classmethod
    def from_samples(cls, samples, tag: str = "") -> EstimateWithCI:
        x = np.asarray(samples, dtype=float)
        if x.size == 0:
            return cls(float("nan"), 0.0, 0, tag)
        se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
        return cls(float(x.mean()), se, int(x.size), tag)

    @classmethod
    def proportion(cls, hits, n: int, tag: str = "") -> EstimateWithCI:
        if n == 0:
            return cls(float("nan"), 0.0, 0, tag)
        p = float(hits) / n
        return cls(p, math.sqrt(p * (1 - p) / n), int(n), tag)

    def as_dict(self) -> dict:
        return {"tag": self.tag, "estimate": self.estimate, "se": self.se, "replicas": self.replicas}


@dataclass
class SlopeFit:
    x: np.ndarray  # log abscissae
    y: np.ndarray  # log ordinates
    slope: float
    intercept: float
    rms: float
    dropped: list = field(default_factory=list)

    @classmethod
    def fit(cls, t, values, dropped=None) -> SlopeFit:
        """OLS of log(values) on log(t), equal weights."""
        t = np.asarray(t, dtype=float)
        v = np.asarray(values, dtype=float)
        if t.size < 3:
            raise ParameterError(f"a slope fit needs at least 3 points, got {t.size}")
        if np.any(t <= 0) or np.any(v <= 0):
            raise ParameterError("log-log fit needs positive abscissae and ordinates")
        x, y = np.log(t), np.log(v)
        res = sps.linregress(x, y)
        resid = y - (res.intercept + res.slope * x)
        if not np.isfinite(res.slope):
            raise ParameterError("slope is not finite")
        return cls(x, y, float(res.slope), float(res.intercept), float(np.sqrt(np.mean(resid ** 2))),
                   list(dropped or []))

    def as_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "residual_rms": self.rms,
                "log_t": self.x.tolist(), "log_value": self.y.tolist(), "dropped": self.dropped}


# ---------------------------------------------------------------------------
# replica farm


def sub_seed(seed: int, k: int) -> int:
    """Seed for the k-th auxiliary experiment of a run; disjoint from all replica seeds."""
    return replica_seed(seed, -1 - k)


def run_replicas(job, seed: int, replicas: int, threads: int = 1) -> list:
    """``job(r, replica_seed)`` for r < replicas, results in replica order."""
    if replicas < 0:
        raise ParameterError("replicas must be >= 0")
    args = [(r, replica_seed(seed, r)) for r in range(replicas)]
    if threads <= 1:
        return [job(r, s) for r, s in args]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda a: job(*a), args))


# ---------------------------------------------------------------------------
# rescaling


REGIMES = ("supercritical", "critical")


@dataclass(frozen=True)
class RescaleSpec:
    L: float
    lam: float
    regime: str

    def __post_init__(self):
        if not self.L > 0:
            raise ParameterError(f"L must be positive, got {self.L}")
        if self.regime not in REGIMES:
            raise ParameterError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.regime == "supercritical" and not self.lam > 1:
            raise ParameterError(f"supercritical scaling needs lambda > 1, got {self.lam}")
        if self.regime == "critical" and self.lam != 1:
            raise ParameterError(f"critical scaling needs lambda = 1, got {self.lam}")

    @property
    def space_factor(self) -> float:
        """Lattice length of one rescaled unit."""
        if self.regime == "critical":
            return float(self.L)
        return math.sqrt(self.L) / (self.lam - 1)

    def lattice_window(self, window: tuple[float, float]) -> tuple[float, float]:
        return (window[0] * self.space_factor, window[1] * self.space_factor)


def rescale(mps: MarkedPointSet, spec: RescaleSpec) -> MarkedPointSet:
    if mps.frame != "lattice":
        raise ParameterError(f"rescale expects a lattice point set, got frame {mps.frame!r}")
    return MarkedPointSet(mps.t / spec.L, mps.positions / spec.space_factor,
                          mps.masses / math.sqrt(spec.L), f"rescaled-{spec.regime}")


# ---------------------------------------------------------------------------
# velocity


def _palm_state_sample(lam: float, t: float, seed: int, top: int = 0):
    """Walks for a palm configuration covering cars 0..top over [0, t]."""
    margin = 40.0 / lam + 10.0
    cfg = generate_initial(ModelParams(lam, (-t - margin, 0.0), t + margin, palm=True, seed=seed))
    walks = build_walks(cfg, DepartureClocks(seed), t + margin, top_label=top)
    return cfg, walks


def estimate_velocity(params: ModelParams, t: float, replicas: int, threads: int = 1) -> EstimateWithCI:
    """Mean of -pi_0(t)/t for the palm car at the origin."""
    if not params.palm:
        raise ParameterError("estimate_velocity needs a palm configuration (palm=True)")
    if not t > 0:
        raise ParameterError("t must be positive")

    def job(r, s):
        _, walks = _palm_state_sample(params.lam, t, s)
        pos, _ = car_state(walks, 0, t)
        return -pos / t

    return EstimateWithCI.from_samples(run_replicas(job, params.seed, replicas, threads), "velocity")


def velocity_via_walks(walks, leave, n: int) -> float:
    """Finite-n ratio -y_{-n} / (T(-n, 0) - y_{-n}) for the walk started at car -n."""
    if n < 1:
        raise ParameterError("n must be >= 1")
    y = float(walks.positions[-n - walks.label0]) if -n >= walks.label0 else None
    if y is None:
        raise DomainError(f"car {-n} not in the walk family")
    return -y / (leave(-n, 0) - y)


def increment_rate(walks, leave, n: int) -> float:
    """n / (T(-n, 0) - y_{-n}): upward jumps of walk -n per unit length until it clears level 0."""
    y = float(walks.positions[-n - walks.label0])
    return n / (leave(-n, 0) - y)


def _walk_family_for(lam: float, n: int, seed: int):
    span = 2.0 * n / lam + 60.0 / lam
    cutoff = span
    while True:
        cfg = generate_initial(ModelParams(lam, (-span, 0.0), cutoff, palm=True, seed=seed))
        walks = build_walks(cfg, DepartureClocks(seed), cutoff, top_label=0)
        lt = leave_times(walks)
        try:
            lt(-n, 0)
            return walks, lt
        except DomainError:
            if -n < walks.label0:
                span *= 2
            else:
                cutoff *= 2


def estimate_velocity_via_walks(lam: float, n: int, replicas: int, seed: int,
                                threads: int = 1) -> tuple[EstimateWithCI, EstimateWithCI]:
    """Replica means of the walk velocity ratio and of the increment rate."""
    def job(r, s):
        walks, lt = _walk_family_for(lam, n, s)
        return velocity_via_walks(walks, lt, n), increment_rate(walks, lt, n)

    out = np.array(run_replicas(job, seed, replicas, threads)).reshape(-1, 2)
    return (EstimateWithCI.from_samples(out[:, 0], "velocity-walks"),
            EstimateWithCI.from_samples(out[:, 1], "increment-rate"))


# ---------------------------------------------------------------------------
# moving cars


@dataclass
class MovingCarReport:
    count: EstimateWithCI
    intensity: float  # min(1, lambda)
    spacings: np.ndarray
    ks_statistic: float
    ks_pvalue: float
    empty: bool

    def as_dict(self) -> dict:
        return {"count": self.count.as_dict(), "target_intensity": self.intensity,
                "n_spacings": int(self.spacings.size), "ks_statistic": self.ks_statistic,
                "ks_pvalue": self.ks_pvalue, "empty_sample": self.empty}


def _moving_sample(lam, t, window, seed):
    lo, hi = window
    # spacings are read forward from points in the window, so look a little past hi
    reach = hi + 40.0 / min(1.0, lam)
    # the cell holding ``reach`` is read off the first car above it
    top = reach + t + 40.0 / lam + 10.0
    cfg = generate_initial(ModelParams(lam, (lo, reach), t, seed=seed),
                           extent=(lo - 40.0 / lam - 10.0, top))
    walks = build_walks(cfg, DepartureClocks(seed), top)
    pts = moving_positions(walks, t, (lo, reach))
    inside = np.flatnonzero((pts >= lo) & (pts <= hi))
    nxt = inside[inside + 1 < pts.size]
    return inside.size, pts[nxt + 1] - pts[nxt]


def moving_car_test(params: ModelParams, t: float, window: tuple[float, float], replicas: int,
                    threads: int = 1) -> MovingCarReport:
    """Moving-car count in ``window`` at time t and a KS test of spacings against Exp(min(1, lambda)).

    Each spacing is measured from a moving car inside the window to the next
    one, which keeps the pooled sample free of window-truncation bias.
    """
    mu = min(1.0, params.lam)
    if t <= 0:
        counts = np.zeros(replicas)
        return MovingCarReport(EstimateWithCI.from_samples(counts, "moving-count"), mu, np.empty(0),
                               float("nan"), float("nan"), True)
    res = run_replicas(lambda r, s: _moving_sample(params.lam, t, window, s), params.seed, replicas, threads)
    counts = np.array([c for c, _ in res], dtype=float)
    sp = np.concatenate([x for _, x in res]) if res else np.empty(0)
    if sp.size == 0:
        return MovingCarReport(EstimateWithCI.from_samples(counts, "moving-count"), mu, sp,
                               float("nan"), float("nan"), True)
    ks = sps.kstest(sp, "expon", args=(0, 1.0 / mu))
    return MovingCarReport(EstimateWithCI.from_samples(counts, "moving-count"), mu, sp,
                           float(ks.statistic), float(ks.pvalue), False)


# ---------------------------------------------------------------------------
# jam statistics over time


@dataclass
class JamSweep:
    times: np.ndarray
    counts: np.ndarray  # pooled jam counts per time
    masses: np.ndarray  # pooled total mass per time
    length: float  # pooled window length
    replicas: int

    @property
    def intensity(self) -> np.ndarray:
        return self.counts / self.length

    @property
    def mean_mass(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.masses / self.counts


def jam_sweep(lam: float, times, window: tuple[float, float], replicas: int, seed: int,
              threads: int = 1) -> JamSweep:
    times = np.asarray(sorted(times), dtype=float)
    if np.any(times <= 0):
        raise ParameterError("times must be positive")
    lo, hi = window
    tmax = float(times[-1])

    def job(r, s):
        cfg = generate_initial(ModelParams(lam, window, tmax, seed=s))
        walks = build_walks(cfg, DepartureClocks(s), hi + tmax)
        out = np.zeros((times.size, 2))
        for q, t in enumerate(times):
            m = jams_from_walks(walks, cfg, float(t), window)
            out[q] = len(m), m.masses.sum()
        return out

    tot = np.sum(run_replicas(job, seed, replicas, threads), axis=0) if replicas else np.zeros((times.size, 2))
    return JamSweep(times, tot[:, 0], tot[:, 1], (hi - lo) * replicas, replicas)


def _fit_positive(times, values, what):
    keep = np.isfinite(values) & (values > 0)
    dropped = [float(t) for t in np.asarray(times)[~keep]]
    return SlopeFit.fit(np.asarray(times)[keep], np.asarray(values)[keep], dropped)


@dataclass
class DecayReport:
    sweep: JamSweep
    intensity_fit: SlopeFit
    mass_fit: SlopeFit

    def as_dict(self) -> dict:
        s = self.sweep
        return {"times": s.times.tolist(), "jam_counts": s.counts.tolist(), "window_length_pooled": s.length,
                "intensity": s.intensity.tolist(), "mean_mass": s.mean_mass.tolist(),
                "intensity_fit": self.intensity_fit.as_dict(), "mass_fit": self.mass_fit.as_dict()}


def jam_decay_fit(lam: float, times, window: tuple[float, float], replicas: int, seed: int,
                  threads: int = 1) -> DecayReport:
    """Log-log slopes of jam intensity and mean jam mass against t (supercritical)."""
    if not lam > 1:
        raise ParameterError(f"jam_decay_fit needs lambda > 1, got {lam}")
    if len(times) < 3:
        raise ParameterError(f"a slope fit needs at least 3 times, got {len(times)}")
    sw = jam_sweep(lam, times, window, replicas, seed, threads)
    return DecayReport(sw, _fit_positive(sw.times, sw.intensity, "intensity"),
                       _fit_positive(sw.times, sw.mean_mass, "mass"))


@dataclass
class CriticalReport:
    sweep: JamSweep
    mass_fit: SlopeFit
    spacing_fit: SlopeFit
    stopped: list  # EstimateWithCI per time

    @property
    def stopped_decreasing(self) -> bool:
        """Downward trend: last below first, and no step up beyond 3 combined standard errors."""
        e = self.stopped
        steps = all(b.estimate <= a.estimate + CI_WIDTH * math.hypot(a.se, b.se) for a, b in zip(e, e[1:]))
        return steps and e[-1].estimate < e[0].estimate

    def as_dict(self) -> dict:
        s = self.sweep
        return {"times": s.times.tolist(), "jam_counts": s.counts.tolist(), "mean_mass": s.mean_mass.tolist(),
                "mean_spacing": (1.0 / s.intensity).tolist(), "mass_fit": self.mass_fit.as_dict(),
                "spacing_fit": self.spacing_fit.as_dict(),
                "p_stopped": [e.as_dict() for e in self.stopped], "p_stopped_decreasing": self.stopped_decreasing}


def palm_stopped(lam: float, times, replicas: int, seed: int, threads: int = 1) -> list:
    """P(the palm car at the origin is stopped at t), one estimate per time."""
    times = np.asarray(sorted(times), dtype=float)

    def job(r, s):
        _, walks = _palm_state_sample(lam, float(times[-1]), s)
        return [stopped_at(walks, 0, float(t)) is not None for t in times]

    hits = np.array(run_replicas(job, seed, replicas, threads), dtype=bool).reshape(-1, times.size)
    return [EstimateWithCI.proportion(hits[:, q].sum(), hits.shape[0], f"p-stopped@{t:g}")
            for q, t in enumerate(times)]


def critical_growth_fit(times, window: tuple[float, float], replicas: int, seed: int,
                        lam: float = 1.0, threads: int = 1) -> CriticalReport:
    """Slopes of mean jam mass and mean jam spacing (1 / intensity) against t at lambda = 1."""
    if lam != 1:
        raise ParameterError(f"critical_growth_fit needs lambda = 1, got {lam}")
    if len(times) < 3:
        raise ParameterError(f"a slope fit needs at least 3 times, got {len(times)}")
    sw = jam_sweep(1.0, times, window, replicas, seed, threads)
    with np.errstate(divide="ignore"):
        spacing = sw.length / sw.counts
    stopped = palm_stopped(1.0, times, replicas, sub_seed(seed, 0), threads)
    return CriticalReport(sw, _fit_positive(sw.times, sw.mean_mass, "mass"),
                          _fit_positive(sw.times, spacing, "spacing"), stopped)


# ---------------------------------------------------------------------------
# condensation


@dataclass
class CondensationReport:
    pair: tuple[int, int]
    t: float
    both_moving: EstimateWithCI
    same_jam: EstimateWithCI
    otherwise: EstimateWithCI
    stopped: EstimateWithCI  # P(first car of the pair stopped)
    same_given_stopped: EstimateWithCI  # P(same jam | at least one stopped)
    moving_or_same: EstimateWithCI

    def as_dict(self) -> dict:
        return {"pair": list(self.pair), "t": self.t,
                **{e.tag: e.as_dict() for e in (self.both_moving, self.same_jam, self.otherwise, self.stopped,
                                                self.same_given_stopped, self.moving_or_same)}}


def condensation_probe(lam: float, pair: tuple[int, int], t: float, replicas: int, seed: int,
                       threads: int = 1) -> CondensationReport:
    i, j = pair
    if not 0 <= i < j:
        raise ParameterError(f"pair must satisfy 0 <= i < j, got {pair}")

    def job(r, s):
        margin = 40.0 / lam + 10.0
        cfg = generate_initial(ModelParams(lam, (-t - margin, 0.0), t + margin, palm=True, seed=s),
                               extent=(-t - margin, t + 4.0 * (j + 10) / lam))
        walks = build_walks(cfg, DepartureClocks(s), t + 4.0 * (j + 10) / lam, top_label=j)
        return stopped_at(walks, i, t), stopped_at(walks, j, t)

    states = run_replicas(job, seed, replicas, threads)
    n = len(states)
    moving = sum(a is None and b is None for a, b in states)
    same = sum(a is not None and a == b for a, b in states)
    any_stopped = sum(a is not None or b is not None for a, b in states)
    first = sum(a is not None for a, _ in states)
    return CondensationReport(
        (i, j), t,
        EstimateWithCI.proportion(moving, n, "both-moving"),
        EstimateWithCI.proportion(same, n, "same-jam"),
        EstimateWithCI.proportion(n - moving - same, n, "otherwise"),
        EstimateWithCI.proportion(first, n, "stopped"),
        EstimateWithCI.proportion(same, any_stopped, "same-jam-given-stopped"),
        EstimateWithCI.proportion(moving + same, n, "both-moving-or-same-jam"),
    )


# ---------------------------------------------------------------------------
# origin crossings and the M/M/1 oracle


def crossing_times(config: InitialConfig, clocks: DepartureClocks, horizon: float) -> np.ndarray:
    """Times at which cars started right of the origin cross it, up to ``horizon``: T(1, j) for j >= 1."""
    if len(config) == 0 or config.positions[-1] <= 0:
        return np.empty(0)
    k = int(np.searchsorted(config.positions, 0.0, side="right"))
    first = config.label0 + k
    right = config.restrict(first, config.label0 + len(config) - 1)
    walks = build_walks(right, clocks, horizon)
    lt = leave_times(walks)
    out = []
    for jj in range(first, walks.top_label + 1):
        try:
            x = lt(first, jj)
        except DomainError:
            break
        if x > horizon:
            break
        out.append(x)
    return np.array(out)


def mm1_departures(lam: float, horizon: float, stream: RngStream) -> np.ndarray:
    """Departure times up to ``horizon`` of an M/M/1 queue started empty (service rate 1)."""
    a, d, out = 0.0, 0.0, []
    while True:
        a += float(quantize(stream.standard_exponential() / lam))
        if a > horizon:
            break
        d = max(a, d) + float(quantize(stream.standard_exponential()))
        if d <= horizon:
            out.append(d)
    return np.array(out)


@dataclass
class CrossingReport:
    lam: float
    horizon: float
    rate: EstimateWithCI
    oracle_rate: EstimateWithCI
    spacings: np.ndarray
    oracle_spacings: np.ndarray
    ks2_statistic: float
    ks2_pvalue: float
    late_ks_pvalue: float  # spacings in the second half vs Exp(min(1, lambda))

    def as_dict(self) -> dict:
        return {"lambda": self.lam, "horizon": self.horizon, "rate": self.rate.as_dict(),
                "oracle_rate": self.oracle_rate.as_dict(), "n_spacings": int(self.spacings.size),
                "n_oracle_spacings": int(self.oracle_spacings.size), "ks2_statistic": self.ks2_statistic,
                "ks2_pvalue": self.ks2_pvalue, "late_ks_pvalue": self.late_ks_pvalue}


def origin_crossings(lam: float, horizon: float, replicas: int, seed: int, threads: int = 1) -> CrossingReport:
    def job(r, s):
        cfg = generate_initial(ModelParams(lam, (0.0, horizon), horizon, seed=s), extent=(0.0, horizon))
        x = crossing_times(cfg, DepartureClocks(s), horizon)
        q = mm1_departures(lam, horizon, RngStream(s, StreamTag("mm1")))
        return x, q

    res = run_replicas(job, seed, replicas, threads)
    xs = [x for x, _ in res]
    qs = [q for _, q in res]
    sp = np.concatenate([np.diff(x) for x in xs]) if xs else np.empty(0)
    qsp = np.concatenate([np.diff(q) for q in qs]) if qs else np.empty(0)
    late = np.concatenate([np.diff(x[x >= horizon / 2]) for x in xs]) if xs else np.empty(0)
    if sp.size and qsp.size:
        ks2 = sps.ks_2samp(sp, qsp, method="asymp")
        k2s, k2p = float(ks2.statistic), float(ks2.pvalue)
    else:
        k2s = k2p = float("nan")
    mu = min(1.0, lam)
    late_p = float(sps.kstest(late, "expon", args=(0, 1.0 / mu)).pvalue) if late.size else float("nan")
    return CrossingReport(lam, horizon,
                          EstimateWithCI.from_samples([x.size / horizon for x in xs], "crossing-rate"),
                          EstimateWithCI.from_samples([q.size / horizon for q in qs], "mm1-rate"),
                          sp, qsp, k2s, k2p, late_p)


# ---------------------------------------------------------------------------
# continuum calibration and lattice-continuum comparison


def meeting_probability(c: float, t: float, replicas: int, seed: int, dt: float = 1e-4,
                        threads: int = 1) -> tuple[EstimateWithCI, float, float]:
    """P(two coalescing paths started at distance c are still apart at t).

    Returns the grid estimate and two closed forms of the same quantity,
    erf(c / (2 sqrt t)) and 2 Phi(c / sqrt(2 t)) - 1.
    """
    grid = cont.GridParams((0.0, c), c, dt, t)

    def job(r, s):
        return bool(cont.run_coalescing_bm(grid, s).alive[0, 0])

    hits = run_replicas(job, seed, replicas, threads)
    closed = math.erf(c / (2.0 * math.sqrt(t)))
    check = 2.0 * sps.norm.cdf(c / math.sqrt(2.0 * t)) - 1.0
    return EstimateWithCI.proportion(sum(hits), len(hits), "meeting-survival"), closed, check


FUNCTIONALS = cont.FUNCTIONAL_NAMES


def _oracle_functionals(kind: str, grid: cont.GridParams, times, window, seed: int, level: int = 0):
    if kind == "critical":
        web = cont.run_reflected_web(grid, seed, times, level=level)
    else:
        web = cont.run_coalescing_bm(grid, seed, times, level=level)
    return [cont.extract_functionals(web.points(q), window) for q in range(len(web.times))]


@dataclass
class SelfConvergenceReport:
    kind: str
    grid: cont.GridParams
    ks: dict  # (t, functional) -> KS distance between the grid and its halving
    count_close: dict  # t -> fraction of paired replicas whose counts differ by <= 1
    max_excess: float

    @property
    def worst(self) -> float:
        return max(self.ks.values())

    def as_dict(self) -> dict:
        return {"kind": self.kind, "h": self.grid.h, "dt": self.grid.dt,
                "ks": {f"{t:g}/{f}": v for (t, f), v in self.ks.items()},
                "count_within_1": {f"{t:g}": v for t, v in self.count_close.items()},
                "max_excess_over_driving_path": self.max_excess}


def oracle_grid(kind: str, window: tuple[float, float], h: float, dt: float, t: float = 1.0) -> cont.GridParams:
    """Grid covering ``window``; the free family gets a margin on both sides."""
    lo, hi = window
    if kind == "critical":
        return cont.GridParams((lo, hi), h, dt, t)
    return cont.GridParams((lo - 0.1, hi + 0.1), h, dt, t)


def self_convergence(kind: str, window, times, h: float, dt: float, replicas: int, seed: int,
                     threads: int = 1) -> SelfConvergenceReport:
    """Paired runs of a grid (h, dt) and its halving sharing the same Brownian increments."""
    if kind not in REGIMES:
        raise ParameterError(f"kind must be one of {REGIMES}")
    grid = oracle_grid(kind, window, h, dt)
    fine = grid.halved()

    def job(r, s):
        a = _oracle_functionals(kind, grid, times, window, s, level=1)
        b = _oracle_functionals(kind, fine, times, window, s, level=0)
        ex = cont.run_reflected_web(fine, s, times).max_excess if kind == "critical" and r < 20 else -np.inf
        return a, b, ex

    res = run_replicas(job, seed, replicas, threads)
    ks, close = {}, {}
    for q, t in enumerate(times):
        for f in FUNCTIONALS:
            xa = [getattr(a[q], f) for a, _, _ in res]
            xb = [getattr(b[q], f) for _, b, _ in res]
            ks[(float(t), f)] = float(sps.ks_2samp(xa, xb, method="asymp").statistic)
        close[float(t)] = float(np.mean([abs(a[q].count - b[q].count) <= 1 for a, b, _ in res]))
    return SelfConvergenceReport(kind, grid, ks, close, float(max(e for _, _, e in res)))


def non_increasing(values) -> bool:
    v = list(values)
    return all(b <= a for a, b in zip(v, v[1:]))


@dataclass
class ScalingReport:
    regime: str
    lam: float
    scales: list
    times: list
    ks: dict  # (L, t, functional) -> two-sample KS distance
    pvalues: dict
    lattice_means: dict
    continuum_means: dict

    def distances(self, functional: str) -> list:
        """KS distance per L, averaged over the time projections."""
        return [float(np.mean([self.ks[(L, t, functional)] for t in self.times])) for L in self.scales]

    def monotone(self, functional: str) -> bool:
        return non_increasing(self.distances(functional))

    def largest(self, functional: str) -> float:
        L = self.scales[-1]
        return max(self.ks[(L, t, functional)] for t in self.times)

    def rows(self):
        for L in self.scales:
            for t in self.times:
                for f in FUNCTIONALS:
                    yield (L, t, f, self.ks[(L, t, f)], self.pvalues[(L, t, f)],
                           self.lattice_means[(L, t, f)], self.continuum_means[(t, f)])

    def as_dict(self) -> dict:
        return {"regime": self.regime, "lambda": self.lam, "scales": self.scales, "times": self.times,
                "distances": {f: self.distances(f) for f in FUNCTIONALS},
                "monotone": {f: self.monotone(f) for f in FUNCTIONALS}}


def lattice_functionals(spec: RescaleSpec, times, window, seed: int) -> list:
    """Rescaled lattice jams of one replica, one functional vector per time."""
    lw = spec.lattice_window(window)
    tmax = max(times) * spec.L
    cfg = generate_initial(ModelParams(spec.lam, lw, tmax, seed=seed))
    walks = build_walks(cfg, DepartureClocks(seed), lw[1] + tmax)
    out = []
    for t in times:
        m = rescale(jams_from_walks(walks, cfg, t * spec.L, lw), spec)
        out.append(cont.extract_functionals(m, window))
    return out


def scaling_comparison(regime: str, scales, times, replicas: int, seed: int, lam: float | None = None,
                       window=(-1.0, 0.0), h: float = 0.02, dt: float = 1e-4,
                       threads: int = 1) -> ScalingReport:
    """KS distances between rescaled-lattice and continuum functionals for each (L, t)."""
    if lam is None:
        lam = 1.0 if regime == "critical" else 2.0
    specs = [RescaleSpec(L, lam, regime) for L in scales]
    times = [float(t) for t in times]
    grid = oracle_grid(regime, window, h, dt)
    ref = run_replicas(lambda r, s: _oracle_functionals(regime, grid, times, window, s),
                       seed, replicas, threads)
    ks, pv, lmean, cmean = {}, {}, {}, {}
    for q, t in enumerate(times):
        for f in FUNCTIONALS:
            cmean[(t, f)] = float(np.mean([getattr(x[q], f) for x in ref]))
    for spec in specs:
        lseed = replica_seed(seed, 1_000_000 + int(spec.L))
        lat = run_replicas(lambda r, s: lattice_functionals(spec, times, window, s), lseed, replicas, threads)
        for q, t in enumerate(times):
            for f in FUNCTIONALS:
                a = [getattr(x[q], f) for x in lat]
                b = [getattr(x[q], f) for x in ref]
                res = sps.ks_2samp(a, b, method="asymp")
                ks[(spec.L, t, f)] = float(res.statistic)
                pv[(spec.L, t, f)] = float(res.pvalue)
                lmean[(spec.L, t, f)] = float(np.mean(a))
    return ScalingReport(regime, lam, [s.L for s in specs], times, ks, pv, lmean, cmean)


__all__ = [
    "EstimateWithCI", "SlopeFit", "RescaleSpec", "rescale", "run_replicas", "estimate_velocity",
    "velocity_via_walks", "increment_rate", "estimate_velocity_via_walks", "moving_car_test",
    "MovingCarReport", "jam_sweep", "jam_decay_fit", "critical_growth_fit", "palm_stopped",
    "condensation_probe", "crossing_times", "mm1_departures", "origin_crossings", "meeting_probability",
    "self_convergence", "scaling_comparison", "non_increasing", "sub_seed",
]
