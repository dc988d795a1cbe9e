"""Command-line entry point.

Subcommands: simulate, stats <which>, scaling <regime>, equivalence, oracle <kind>.
Exit codes: 0 success, 1 internal error, 2 configuration error, 3 an
acceptance bar failed.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import continuum as cont
from . import stats
from .artifacts import (Config, ConfigError, RunManifest, calibration_hash, load_calibration, load_config_file,
                        sha256_file, write_csv, write_json)
from .errors import ParameterError, WindowError
from .model import DepartureClocks, ModelParams, build_schedule, generate_initial, jam_configuration, trajectory
from .rng import replica_seed
from .walks import build_walks, check_equivalence, leave_times, walks_rows

log = logging.getLogger("slowstart")

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_ACCEPTANCE = 0, 1, 2, 3

STATS_KINDS = ("velocity", "poisson", "decay", "critical", "condensation", "crossings")
ORACLE_KINDS = ("coalescing", "reflected", "meeting", "convergence")
EQUIVALENCE_LAMBDAS = (0.5, 1.0, 2.0)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _choice(kind: str, valid):
    def check(v):
        if v not in valid:
            raise argparse.ArgumentTypeError(f"unknown {kind} {v!r}; valid values: {', '.join(valid)}")
        return v
    return check


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="slowstart", description="Slow-to-start traffic model: simulation and statistics.")
    p.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value config file; flags override it")
    common.add_argument("--lambda", dest="lambda_", type=float)
    common.add_argument("--window-lo", type=float)
    common.add_argument("--window-hi", type=float)
    common.add_argument("--horizon", type=float)
    common.add_argument("--palm", choices=["true", "false"])
    common.add_argument("--seed", type=int)
    common.add_argument("--replicas", type=int)
    common.add_argument("--times", help="comma-separated list")
    common.add_argument("--scales-L", help="comma-separated list")
    common.add_argument("--grid-step", type=float)
    common.add_argument("--dt", type=float)
    common.add_argument("--extent-lo", type=float)
    common.add_argument("--extent-hi", type=float)
    common.add_argument("--out-dir")
    common.add_argument("--threads", type=int)
    common.add_argument("--pair", help="two car labels, e.g. 0,3")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[common], help="jams, trajectories and walks of one instance")
    s = sub.add_parser("stats", parents=[common], help="Monte Carlo estimators")
    s.add_argument("which", type=_choice("statistic", STATS_KINDS), help=" | ".join(STATS_KINDS))
    s = sub.add_parser("scaling", parents=[common], help="rescaled lattice vs continuum")
    s.add_argument("regime", type=_choice("regime", stats.REGIMES), help=" | ".join(stats.REGIMES))
    sub.add_parser("equivalence", parents=[common], help="schedule recursion vs walk read-off")
    s = sub.add_parser("oracle", parents=[common], help="continuum oracles")
    s.add_argument("kind", type=_choice("oracle", ORACLE_KINDS), help=" | ".join(ORACLE_KINDS))
    return p


def resolve_config(ns: argparse.Namespace, defaults: dict | None = None) -> Config:
    file_values = dict(defaults or {})
    if ns.config:
        file_values.update(load_config_file(ns.config))
    flags = {
        "lambda": ns.lambda_, "window_lo": ns.window_lo, "window_hi": ns.window_hi, "horizon": ns.horizon,
        "palm": ns.palm, "seed": ns.seed, "replicas": ns.replicas, "times": ns.times, "scales_L": ns.scales_L,
        "grid_step": ns.grid_step, "dt": ns.dt, "extent_lo": ns.extent_lo, "extent_hi": ns.extent_hi,
        "out_dir": ns.out_dir, "threads": ns.threads, "pair": ns.pair,
    }
    return Config.resolve(file_values, flags)


# ---------------------------------------------------------------------------
# runners; each returns (files written, acceptance ok)


def _report(cfg: Config, tag: str, params: dict, estimate, bars: dict, extra: dict | None = None) -> dict:
    return {
        "estimator": tag,
        "params": params,
        "estimate": estimate,
        "replicas": cfg.replicas,
        "bars": {k: bool(v) for k, v in bars.items()},
        "passed": all(bars.values()),
        "calibration_sha256": calibration_hash(),
        **(extra or {}),
    }


def run_simulate(cfg: Config) -> tuple[list[Path], bool]:
    out = Path(cfg.out_dir)
    params = ModelParams(cfg.lam, (cfg.window_lo, cfg.window_hi), cfg.horizon, cfg.palm, cfg.seed)
    lo = cfg.window_lo - cfg.horizon if cfg.extent_lo is None else cfg.extent_lo
    hi = cfg.window_hi + cfg.horizon if cfg.extent_hi is None else cfg.extent_hi
    config = generate_initial(params, (lo, hi))
    clocks = DepartureClocks(cfg.seed)
    schedule = build_schedule(config, clocks)
    times = cfg.times or [cfg.horizon]
    jam_rows = []
    for t in times:
        if t > cfg.horizon:
            raise ConfigError(f"times: {t} exceeds horizon {cfg.horizon}")
        m = jam_configuration(schedule, config, t, params.window)
        jam_rows += [(cfg.seed, t, p, ms) for p, ms in m.pairs()]
    traj_rows = []
    first, last = config.labels_in(*params.window)
    for j in range(first, last + 1):
        for seg in trajectory(schedule, config, j, cfg.horizon).segments:
            traj_rows.append((j, *seg))
    walks = build_walks(config, clocks, params.window[1] + cfg.horizon)
    files = [
        write_csv(out / "jams.csv", ["run_id", "t", "position", "mass"], jam_rows),
        write_csv(out / "trajectory.csv", ["car", "t_start", "t_end", "position_start", "speed"], traj_rows),
        write_csv(out / "walks.csv", ["walk_label", "jump_location", "coalesces_with", "coalescence_location"],
                  walks_rows(walks)),
    ]
    return files, True


def _velocity(cfg, cal):
    t = cfg.times[0] if cfg.times else cfg.horizon
    params = ModelParams(cfg.lam, (-t, 0.0), t, True, cfg.seed)
    v = stats.estimate_velocity(params, t, cfg.replicas, cfg.threads)
    target = min(1.0 / cfg.lam, 1.0)
    n = max(1, int(round(cfg.lam * t / 2)))
    vw, rate = stats.estimate_velocity_via_walks(cfg.lam, n, cfg.replicas, stats.sub_seed(cfg.seed, 0), cfg.threads)
    bars = {"velocity_within_tolerance": abs(v.estimate - target) <= cal["velocity_tolerance"],
            "estimators_agree": abs(v.estimate - vw.estimate) <= max(cal["velocity_walks_tolerance"],
                                                                      3 * np.hypot(v.se, vw.se))}
    if cfg.lam > 1:
        bars["increment_rate_near_1"] = abs(rate.estimate - 1.0) <= cal["increment_rate_tolerance"]
    rep = _report(cfg, "velocity", {"lambda": cfg.lam, "t": t, "walk_n": n}, v.estimate, bars,
                  {"se": v.se, "target": target, "velocity": v.as_dict(), "velocity_walks": vw.as_dict(),
                   "increment_rate": rate.as_dict()})
    return rep, []


def _poisson(cfg, cal):
    t = cfg.times[0] if cfg.times else cfg.horizon
    window = (cfg.window_lo, cfg.window_hi)
    r = stats.moving_car_test(ModelParams(cfg.lam, window, t, False, cfg.seed), t, window, cfg.replicas, cfg.threads)
    target = r.intensity * (window[1] - window[0])
    bars = {"count_covers_target": (not r.empty) and r.count.covers(target),
            "spacing_ks_p": (not r.empty) and r.ks_pvalue > cal["ks_p_bar"]}
    rep = _report(cfg, "moving-cars", {"lambda": cfg.lam, "t": t, "window": list(window)}, r.count.estimate,
                  bars, {"se": r.count.se, "target": target, **r.as_dict()})
    return rep, [("spacings.csv", ["spacing"], [(x,) for x in r.spacings])]


def _sweep_times(cfg):
    if len(cfg.times) < 3:
        raise ConfigError(f"times: a slope fit needs at least 3 time points, got {len(cfg.times)}")
    return cfg.times


def _decay(cfg, cal):
    times = _sweep_times(cfg)
    r = stats.jam_decay_fit(cfg.lam, times, (cfg.window_lo, cfg.window_hi), cfg.replicas, cfg.seed, cfg.threads)
    bars = {"intensity_slope": cal["decay_slope_lo"] <= r.intensity_fit.slope <= cal["decay_slope_hi"],
            "mass_slope": cal["mass_slope_lo"] <= r.mass_fit.slope <= cal["mass_slope_hi"]}
    rep = _report(cfg, "jam-decay", {"lambda": cfg.lam, "window": [cfg.window_lo, cfg.window_hi]},
                  r.intensity_fit.slope, bars, {"se": None, **r.as_dict()})
    rows = [(t, c, i, m) for t, c, i, m in zip(r.sweep.times, r.sweep.counts, r.sweep.intensity, r.sweep.mean_mass)]
    return rep, [("sweep.csv", ["t", "jam_count", "intensity", "mean_mass"], rows)]


def _critical(cfg, cal):
    times = _sweep_times(cfg)
    r = stats.critical_growth_fit(times, (cfg.window_lo, cfg.window_hi), cfg.replicas, cfg.seed, cfg.lam,
                                  cfg.threads)
    last = r.stopped[-1].estimate
    bars = {"mass_slope": cal["mass_slope_lo"] <= r.mass_fit.slope <= cal["mass_slope_hi"],
            "spacing_slope": cal["spacing_slope_lo"] <= r.spacing_fit.slope <= cal["spacing_slope_hi"],
            "p_stopped_decreasing": r.stopped_decreasing,
            "p_stopped_below_bar": last < cal["critical_stopped_bar"]}
    rep = _report(cfg, "critical-growth", {"lambda": cfg.lam, "window": [cfg.window_lo, cfg.window_hi]},
                  r.mass_fit.slope, bars, {"se": None, **r.as_dict()})
    rows = [(t, c, m) for t, c, m in zip(r.sweep.times, r.sweep.counts, r.sweep.mean_mass)]
    return rep, [("sweep.csv", ["t", "jam_count", "mean_mass"], rows)]


def _condensation(cfg, cal):
    t = cfg.times[0] if cfg.times else cfg.horizon
    r = stats.condensation_probe(cfg.lam, tuple(cfg.pair), t, cfg.replicas, cfg.seed, cfg.threads)
    if cfg.lam > 1:
        bars = {"moving_or_same_jam": r.moving_or_same.estimate > cal["condensation_bar"]}
        est = r.moving_or_same
    else:
        bars = {"p_stopped_below_bar": r.stopped.estimate < cal["critical_stopped_bar"],
                "same_jam_given_stopped": r.same_given_stopped.estimate > cal["critical_same_jam_bar"]}
        est = r.same_given_stopped
    rep = _report(cfg, "condensation", {"lambda": cfg.lam, "t": t, "pair": list(cfg.pair)}, est.estimate, bars,
                  {"se": est.se, **r.as_dict()})
    return rep, []


def _crossings(cfg, cal):
    horizon = cfg.horizon
    r = stats.origin_crossings(cfg.lam, horizon, cfg.replicas, cfg.seed, cfg.threads)
    target = min(1.0, cfg.lam)
    bars = {"rate_within_tolerance": abs(r.rate.estimate - target) <= cal["crossing_tolerance"],
            "mm1_two_sample_ks_p": r.ks2_pvalue > cal["ks_p_bar"]}
    rep = _report(cfg, "origin-crossings", {"lambda": cfg.lam, "horizon": horizon}, r.rate.estimate, bars,
                  {"se": r.rate.se, "target": target, **r.as_dict()})
    return rep, [("crossing_spacings.csv", ["spacing"], [(x,) for x in r.spacings])]


_STATS = {"velocity": _velocity, "poisson": _poisson, "decay": _decay, "critical": _critical,
          "condensation": _condensation, "crossings": _crossings}


def run_stats(cfg: Config, which: str) -> tuple[list[Path], bool]:
    if which not in _STATS:
        raise ConfigError(f"unknown statistic {which!r}; valid values: {', '.join(STATS_KINDS)}")
    if cfg.replicas < 1:
        raise ConfigError("replicas: must be >= 1")
    rep, dumps = _STATS[which](cfg, load_calibration())
    out = Path(cfg.out_dir)
    files = [write_csv(out / name, header, rows) for name, header, rows in dumps]
    files.append(write_json(out / "report.json", rep))
    return files, rep["passed"]


def run_scaling(cfg: Config, regime: str) -> tuple[list[Path], bool]:
    if regime == "critical" and cfg.lam != 1:
        raise ConfigError(f"lambda: critical scaling needs lambda = 1, got {cfg.lam}")
    if regime == "supercritical" and not cfg.lam > 1:
        raise ConfigError(f"lambda: supercritical scaling needs lambda > 1, got {cfg.lam}")
    if cfg.replicas < 2:
        raise ConfigError("replicas: need at least 2 for a two-sample comparison")
    cal = load_calibration()
    scales = cfg.scales_L or [1e2, 1e3, 1e4]
    times = cfg.times or [0.5, 1.0]
    r = stats.scaling_comparison(regime, scales, times, cfg.replicas, cfg.seed, cfg.lam,
                                 (cfg.window_lo, cfg.window_hi), cfg.grid_step, cfg.dt, cfg.threads)
    target = "count" if regime == "critical" else "total_mass"
    bars = {f"{target}_non_increasing_in_L": r.monotone(target),
            f"{target}_ks_at_largest_L": r.largest(target) <= cal["scaling_ks_bar"]}
    rep = _report(cfg, f"scaling-{regime}", {"lambda": cfg.lam, "scales_L": scales, "times": times,
                                             "window": [cfg.window_lo, cfg.window_hi], "h": cfg.grid_step,
                                             "dt": cfg.dt},
                  r.largest(target), bars, {"se": None, "functional": target, **r.as_dict()})
    out = Path(cfg.out_dir)
    files = [write_csv(out / "comparison.csv",
                       ["L", "t", "functional", "ks_distance", "ks_pvalue", "lattice_mean", "continuum_mean"],
                       r.rows()),
             write_json(out / "report.json", rep)]
    return files, rep["passed"]


def equivalence_instance(index: int, seed: int):
    """Instance ``index`` of an equivalence batch: lambda cycles over 0.5, 1, 2; 100 to 1000 cars."""
    lam = EQUIVALENCE_LAMBDAS[index % len(EQUIVALENCE_LAMBDAS)]
    s = replica_seed(seed, index)
    n_cars = 100 + int(np.random.default_rng(s).integers(0, 901))
    cfg = generate_initial(ModelParams(lam, (0.0, n_cars / lam), 1.0, seed=s), (0.0, n_cars / lam))
    return lam, cfg, DepartureClocks(s)


def run_equivalence(cfg: Config) -> tuple[list[Path], bool]:
    if cfg.replicas < 1:
        raise ConfigError("replicas: batch size must be >= 1")

    def job(r, _):
        lam, config, clocks = equivalence_instance(r, cfg.seed)
        sched = build_schedule(config, clocks)
        walks = build_walks(config, clocks, np.inf)
        rep = check_equivalence(sched, leave_times(walks), config)
        return lam, len(config), rep.entries, rep.violations, rep.max_discrepancy

    res = stats.run_replicas(job, cfg.seed, cfg.replicas, cfg.threads)
    per = {}
    for lam in EQUIVALENCE_LAMBDAS:
        sel = [x for x in res if x[0] == lam]
        per[f"{lam:g}"] = {"instances": len(sel), "entries": sum(x[2] for x in sel),
                           "violations": sum(x[3] for x in sel),
                           "max_discrepancy": max((x[4] for x in sel), default=0.0)}
    total = sum(x[3] for x in res)
    rep = _report(cfg, "equivalence", {"batch": cfg.replicas}, total, {"zero_violations": total == 0},
                  {"se": None, "per_lambda": per, "entries": sum(x[2] for x in res)})
    out = Path(cfg.out_dir)
    files = [write_csv(out / "equivalence.csv", ["instance", "lambda", "cars", "entries", "violations",
                                                 "max_discrepancy"], [(i, *x) for i, x in enumerate(res)]),
             write_json(out / "report.json", rep)]
    return files, rep["passed"]


def run_oracle(cfg: Config, kind: str) -> tuple[list[Path], bool]:
    cal = load_calibration()
    out = Path(cfg.out_dir)
    times = cfg.times or [1.0]
    window = (cfg.window_lo, cfg.window_hi)
    if cfg.replicas < 1:
        raise ConfigError("replicas: must be >= 1")
    if kind in ("coalescing", "reflected"):
        regime = "critical" if kind == "reflected" else "supercritical"
        grid = stats.oracle_grid(regime, window, cfg.grid_step, cfg.dt)
        run = cont.run_reflected_web if kind == "reflected" else cont.run_coalescing_bm

        def job(r, s):
            web = run(grid, s, times)
            return [(r, web.points(q)) for q in range(len(times))]

        rows = []
        for batch in stats.run_replicas(job, cfg.seed, cfg.replicas, cfg.threads):
            for r, m in batch:
                rows += [(r, m.t, p, ms, m.frame) for p, ms in m.pairs()]
        files = [write_csv(out / "continuum.csv", ["replica", "t", "position", "mass", "frame"], rows)]
        return files, True
    if kind == "meeting":
        t = times[0]
        est, closed, check = stats.meeting_probability(1.0, t, cfg.replicas, cfg.seed, cal["meeting_dt"], cfg.threads)
        bars = {"closed_form_within_tolerance": abs(est.estimate - closed) <= cal["meeting_tolerance"],
                "closed_forms_agree": abs(closed - check) < 1e-12}
        rep = _report(cfg, "meeting-probability", {"c": 1.0, "t": t, "dt": cal["meeting_dt"]}, est.estimate, bars,
                      {"se": est.se, "closed_form": closed, "cross_check": check})
        return [write_json(out / "report.json", rep)], rep["passed"]
    reports, ok = {}, True
    for regime in stats.REGIMES:
        sc = stats.self_convergence(regime, window, times, cfg.grid_step, cfg.dt, cfg.replicas, cfg.seed,
                                    cfg.threads)
        reports[regime] = sc.as_dict()
        ok &= sc.worst <= cal["self_convergence_ks_bar"]
        if regime == "critical":
            ok &= sc.max_excess <= 0
    rep = _report(cfg, "self-convergence", {"h": cfg.grid_step, "dt": cfg.dt, "times": times}, None,
                  {"ks_below_bar": ok}, {"se": None, **reports})
    return [write_json(out / "report.json", rep)], ok


_DEFAULTS = {
    "simulate": {},
    "equivalence": {"replicas": "1000"},
}


def _dispatch(ns, cfg):
    if ns.command == "simulate":
        return run_simulate(cfg)
    if ns.command == "stats":
        return run_stats(cfg, ns.which)
    if ns.command == "scaling":
        return run_scaling(cfg, ns.regime)
    if ns.command == "equivalence":
        return run_equivalence(cfg)
    return run_oracle(cfg, ns.kind)


def main(argv=None) -> int:
    start = time.perf_counter()
    try:
        ns = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(ns, _DEFAULTS.get(ns.command))
        files, ok = _dispatch(ns, cfg)
        out = Path(cfg.out_dir)
        RunManifest(__version__, cfg.seed, cfg.as_dict(), {f.name: sha256_file(f) for f in files},
                    round(time.perf_counter() - start, 3), " ".join(sys.argv[1:] if argv is None else argv)
                    ).write(out)
    except (ParameterError, WindowError) as e:  # includes ConfigError and extent violations
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    except Exception as e:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    if not ok:
        print("acceptance bar failed; see report.json", file=sys.stderr)
        return EXIT_ACCEPTANCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
