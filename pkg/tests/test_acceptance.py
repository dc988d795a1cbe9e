"""Acceptance criteria 1-10, each run end to end through the command-line pipeline.

Every test prints one pass/fail line (collected again in the terminal summary)
before asserting, so a failing criterion still reports its numbers.
"""
import json
import shlex
import time

import pytest

from slowstart.artifacts import RunManifest, load_calibration
from slowstart.cli import EXIT_OK, main

CAL = load_calibration()


def cli(out, *args):
    code = main([*map(str, args), "--out-dir", str(out)])
    rep = out / "report.json"
    return code, (json.loads(rep.read_text()) if rep.exists() else None)


def timed(fn):
    t0 = time.perf_counter()
    res = fn()
    return res, time.perf_counter() - t0


def test_criterion_01_equivalence(tmp_path, verdict):
    (code, rep), secs = timed(lambda: cli(tmp_path, "equivalence", "--replicas", 1000, "--seed", 1))
    per = ", ".join(f"lambda={k}: {v['instances']} inst/{v['violations']} bad" for k, v in rep["per_lambda"].items())
    ok = code == EXIT_OK and rep["estimate"] == 0 and secs <= 120
    verdict(1, ok, f"{rep['entries']} entries, {rep['estimate']} discrepancies ({per}); {secs:.0f}s")
    assert ok


def test_criterion_02_velocity(tmp_path, verdict):
    lines, ok, t0 = [], True, time.perf_counter()
    for lam in (0.5, 1.0, 2.0):
        code, rep = cli(tmp_path / f"lam{lam}", "stats", "velocity", "--lambda", lam, "--times", 2000,
                        "--replicas", 1000, "--seed", 2)
        good = abs(rep["estimate"] - rep["target"]) <= 0.03
        ok &= good
        lines.append(f"lambda={lam:g}: {rep['estimate']:.4f} (target {rep['target']:g}, "
                     f"walks {rep['velocity_walks']['estimate']:.4f})")
    secs = time.perf_counter() - t0
    ok &= secs <= 300
    verdict(2, ok, "; ".join(lines) + f"; {secs:.0f}s")
    assert ok


def test_criterion_03_poisson_limit(tmp_path, verdict):
    lines, ok, t0 = [], True, time.perf_counter()
    for lam in (2.0, 0.5):
        code, rep = cli(tmp_path / f"lam{lam}", "stats", "poisson", "--lambda", lam, "--times", 5000,
                        "--window-lo", 0, "--window-hi", 50, "--horizon", 5000, "--replicas", 200, "--seed", 3)
        lo, hi = rep["estimate"] - 3 * rep["se"], rep["estimate"] + 3 * rep["se"]
        good = lo <= rep["target"] <= hi and rep["ks_pvalue"] > 0.01
        ok &= good
        lines.append(f"lambda={lam:g}: count {rep['estimate']:.2f}+-{3 * rep['se']:.2f} (target {rep['target']:g}), "
                     f"KS p={rep['ks_pvalue']:.3f}")
    secs = time.perf_counter() - t0
    ok &= secs <= 300
    verdict(3, ok, "; ".join(lines) + f"; {secs:.0f}s")
    assert ok


def test_criterion_04_jam_decay(tmp_path, verdict):
    w = CAL["decay_window"]
    (code, rep), secs = timed(lambda: cli(tmp_path, "stats", "decay", "--lambda", 2, "--times",
                                          "100,316.2278,1000,3162.278,10000", "--window-lo", -w,
                                          "--window-hi", 0, "--replicas", 200, "--seed", 4))
    si, sm = rep["intensity_fit"]["slope"], rep["mass_fit"]["slope"]
    ok = -0.6 <= si <= -0.4 and 0.4 <= sm <= 0.6 and secs <= 600
    verdict(4, ok, f"intensity slope {si:.3f}, mass slope {sm:.3f}; {secs:.0f}s")
    assert ok


def test_criterion_05_critical_exponents(tmp_path, verdict):
    w = CAL["critical_window"]
    (code, rep), secs = timed(lambda: cli(tmp_path, "stats", "critical", "--lambda", 1, "--times",
                                          "100,316.2278,1000,3162.278,10000", "--window-lo", -w,
                                          "--window-hi", 0, "--replicas", 200, "--seed", 5))
    sm, ss = rep["mass_fit"]["slope"], rep["spacing_fit"]["slope"]
    ok = 0.4 <= sm <= 0.6 and 0.85 <= ss <= 1.15 and secs <= 600
    verdict(5, ok, f"mass slope {sm:.3f}, spacing slope {ss:.3f}; {secs:.0f}s")
    assert ok


def test_criterion_06_condensation(tmp_path, verdict):
    t0 = time.perf_counter()
    _, sup = cli(tmp_path / "sup", "stats", "condensation", "--lambda", 2, "--times", 10000, "--pair", "0,3",
                 "--replicas", 1000, "--seed", 6)
    _, crit = cli(tmp_path / "crit", "stats", "condensation", "--lambda", 1, "--times", 10000, "--pair", "0,3",
                  "--replicas", 3000, "--seed", 6)
    secs = time.perf_counter() - t0
    p_ms = sup["both-moving-or-same-jam"]["estimate"]
    p_st = crit["stopped"]["estimate"]
    p_sj = crit["same-jam-given-stopped"]["estimate"]
    ok = (p_ms > CAL["condensation_bar"] and p_st < CAL["critical_stopped_bar"]
          and p_sj > CAL["critical_same_jam_bar"] and secs <= 600)
    verdict(6, ok, f"lambda=2: P(moving or same jam)={p_ms:.3f} (bar {CAL['condensation_bar']}); lambda=1: "
                   f"P(stopped)={p_st:.3f} (bar {CAL['critical_stopped_bar']}), P(same|stopped)={p_sj:.3f} "
                   f"(bar {CAL['critical_same_jam_bar']}); {secs:.0f}s")
    assert ok


def test_criterion_07_mm1_crossings(tmp_path, verdict):
    t0 = time.perf_counter()
    _, sup = cli(tmp_path / "sup", "stats", "crossings", "--lambda", 2, "--horizon", 2000, "--replicas", 100,
                 "--seed", 7)
    _, sub = cli(tmp_path / "sub", "stats", "crossings", "--lambda", 0.5, "--horizon", 2000, "--replicas", 100,
                 "--seed", 7)
    secs = time.perf_counter() - t0
    ok = abs(sup["estimate"] - 1.0) <= 0.03 and sub["ks2_pvalue"] > 0.01 and secs <= 300
    verdict(7, ok, f"lambda=2 rate {sup['estimate']:.4f}; lambda=0.5 rate {sub['estimate']:.4f}, "
                   f"two-sample KS p={sub['ks2_pvalue']:.3f}; {secs:.0f}s")
    assert ok


def test_criterion_08_scaling(tmp_path, verdict):
    t0 = time.perf_counter()
    grid = ["--grid-step", CAL["oracle_h"], "--dt", CAL["oracle_dt"]]
    _, conv = cli(tmp_path / "conv", "oracle", "convergence", "--window-lo", -1, "--window-hi", 0,
                  "--times", "0.5,1", "--replicas", 300, "--seed", 8, *grid)
    _, meet = cli(tmp_path / "meet", "oracle", "meeting", "--times", 1, "--replicas", 10000, "--seed", 8,
                  "--grid-step", 0.01, "--dt", CAL["meeting_dt"])
    reps = {}
    for regime, lam in (("critical", 1), ("supercritical", 2)):
        _, reps[regime] = cli(tmp_path / regime, "scaling", regime, "--lambda", lam, "--scales-L", "100,1000,10000",
                              "--times", "0.5,1", "--window-lo", -1, "--window-hi", 0, "--replicas", 300,
                              "--seed", 8, *grid)
    secs = time.perf_counter() - t0
    worst = max(max(conv[r]["ks"].values()) for r in ("supercritical", "critical"))
    a_ok = worst <= 0.05 and abs(meet["estimate"] - meet["closed_form"]) <= 0.02
    parts = [f"(a) self-convergence worst KS {worst:.3f}, meeting {meet['estimate']:.4f} vs {meet['closed_form']:.4f}"]
    b_ok = True
    for regime, f in (("critical", "count"), ("supercritical", "total_mass")):
        r = reps[regime]
        d = r["distances"][f]
        largest = r["estimate"]
        b_ok &= r["monotone"][f] and largest <= 0.1
        parts.append(f"(b) {regime} {f}: mean KS by L {[round(x, 3) for x in d]}, "
                     f"non-increasing={r['monotone'][f]}, max KS at largest L {largest:.3f}")
    ok = a_ok and b_ok and secs <= 1800
    verdict(8, ok, "; ".join(parts) + f"; {secs:.0f}s")
    assert ok


def _data_files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "manifest.json"}


def test_criterion_09_determinism(tmp_path, verdict):
    t0 = time.perf_counter()
    first = tmp_path / "first"
    assert main(["simulate", "--lambda", "1.5", "--seed", "9", "--times", "1,4,10", "--palm", "true",
                 "--out-dir", str(first)]) == EXIT_OK
    man = RunManifest.read(first / "manifest.json")
    replay = tmp_path / "replay"
    assert main([*shlex.split(man.command), "--out-dir", str(replay)]) == EXIT_OK
    same_replay = _data_files(first) == _data_files(replay)
    same_sums = RunManifest.read(replay / "manifest.json").checksums == man.checksums
    outs = {}
    for th in (1, 8):
        d = tmp_path / f"threads{th}"
        cli(d, "stats", "poisson", "--lambda", 2, "--times", 200, "--window-lo", 0, "--window-hi", 50,
            "--horizon", 200, "--replicas", 40, "--seed", 9, "--threads", th)
        outs[th] = _data_files(d)
    same_threads = outs[1] == outs[8]
    secs = time.perf_counter() - t0
    ok = same_replay and same_sums and same_threads and secs <= 120
    verdict(9, ok, f"manifest replay identical={same_replay and same_sums}, threads 1 vs 8 identical={same_threads}; "
                   f"{secs:.0f}s")
    assert ok


def test_criterion_10_window_consistency(tmp_path, verdict):
    t0 = time.perf_counter()
    bad = []
    for seed in range(100):
        base = ["simulate", "--lambda", 1.0 + (seed % 3) * 0.5, "--seed", seed, "--window-lo", -10,
                "--window-hi", 10, "--horizon", 10, "--times", "2,5,10"]
        a, b = tmp_path / f"a{seed}", tmp_path / f"b{seed}"
        main([*map(str, base), "--out-dir", str(a)])
        # default extent [-20, 20]; doubled to [-40, 40]
        main([*map(str, base), "--extent-lo", "-40", "--extent-hi", "40", "--out-dir", str(b)])
        for name in ("jams.csv", "trajectory.csv"):
            if (a / name).read_bytes() != (b / name).read_bytes():
                bad.append((seed, name))
    secs = time.perf_counter() - t0
    ok = not bad and secs <= 120
    verdict(10, ok, f"100 seeds, extent doubled, {len(bad)} differing files; {secs:.0f}s")
    assert ok
