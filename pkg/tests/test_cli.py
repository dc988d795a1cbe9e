import json
import subprocess
import sys

import pytest

from slowstart.artifacts import Config, ConfigError, RunManifest, parse_flat
from slowstart.cli import EXIT_ACCEPTANCE, EXIT_CONFIG, EXIT_OK, main


def run(tmp_path, *args):
    return main([*args, "--out-dir", str(tmp_path)])


def test_simulate_writes_outputs_and_manifest(tmp_path):
    assert run(tmp_path, "simulate", "--lambda", "1.5", "--seed", "4", "--times", "2,5") == EXIT_OK
    for name in ("jams.csv", "trajectory.csv", "walks.csv", "manifest.json"):
        assert (tmp_path / name).exists()
    assert (tmp_path / "jams.csv").read_text().splitlines()[0] == "run_id,t,position,mass"
    man = RunManifest.read(tmp_path / "manifest.json")
    assert man.seed == 4 and man.config["lambda"] == 1.5
    assert set(man.checksums) == {"jams.csv", "trajectory.csv", "walks.csv"}
    assert man.verify(tmp_path) == []
    (tmp_path / "jams.csv").write_text("tampered\n")
    assert man.verify(tmp_path) == ["jams.csv"]


def test_simulate_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run(d, "simulate", "--seed", "9", "--palm", "true") == EXIT_OK
    for name in ("jams.csv", "trajectory.csv", "walks.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_window_rule_violation_exits_2(tmp_path, capsys):
    code = run(tmp_path, "simulate", "--window-hi", "10", "--horizon", "10", "--extent-hi", "15")
    assert code == EXIT_CONFIG
    assert "extent_hi" in capsys.readouterr().err


def test_bad_window_exits_2(tmp_path, capsys):
    assert run(tmp_path, "simulate", "--window-lo", "5", "--window-hi", "1") == EXIT_CONFIG
    assert "window" in capsys.readouterr().err


def test_unknown_statistic_lists_valid_ones(tmp_path, capsys):
    assert run(tmp_path, "stats", "speed") == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "velocity" in err and "crossings" in err


def test_unknown_config_key(tmp_path, capsys):
    f = tmp_path / "run.cfg"
    f.write_text("lambda = 2\ncolour = red\n")
    assert run(tmp_path, "simulate", "--config", str(f)) == EXIT_CONFIG
    assert "colour" in capsys.readouterr().err


def test_flags_override_config_file(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("lambda = 2  # supercritical\nseed = 1\n")
    assert run(tmp_path, "simulate", "--config", str(f), "--seed", "3") == EXIT_OK
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["config"]["lambda"] == 2.0 and man["seed"] == 3


def test_out_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("SLOWSTART_OUT_DIR", str(tmp_path / "env"))
    assert main(["simulate", "--seed", "1"]) == EXIT_OK
    assert (tmp_path / "env" / "jams.csv").exists()


def test_resolution_rule_in_config():
    with pytest.raises(ConfigError, match="dt"):
        Config.resolve({}, {"grid_step": 0.01, "dt": 0.001})


def test_parse_flat_errors():
    assert parse_flat("a = 1 # note\n\n b=2") == {"a": "1", "b": "2"}
    with pytest.raises(ConfigError, match=":2:"):
        parse_flat("a = 1\nnonsense\n")


def test_stats_velocity_report_schema(tmp_path):
    code = run(tmp_path, "stats", "velocity", "--lambda", "2", "--times", "50", "--replicas", "5")
    assert code in (EXIT_OK, EXIT_ACCEPTANCE)
    rep = json.loads((tmp_path / "report.json").read_text())
    for key in ("estimator", "params", "estimate", "se", "replicas", "bars", "passed", "calibration_sha256"):
        assert key in rep
    assert rep["estimator"] == "velocity" and rep["replicas"] == 5
    assert (code == EXIT_OK) == rep["passed"]


def test_decay_with_one_time_is_a_config_error(tmp_path, capsys):
    assert run(tmp_path, "stats", "decay", "--lambda", "2", "--times", "100") == EXIT_CONFIG
    assert "at least 3" in capsys.readouterr().err


def test_critical_scaling_needs_lambda_one(tmp_path):
    assert run(tmp_path, "scaling", "critical", "--lambda", "2") == EXIT_CONFIG


def test_supercritical_scaling_tiny_run(tmp_path):
    code = run(tmp_path, "scaling", "supercritical", "--lambda", "2", "--scales-L", "10,40", "--times", "0.5",
               "--replicas", "10", "--grid-step", "0.05", "--dt", "0.001")
    assert code in (EXIT_OK, EXIT_ACCEPTANCE)
    lines = (tmp_path / "comparison.csv").read_text().splitlines()
    assert lines[0].startswith("L,t,functional,ks_distance")
    assert len(lines) == 1 + 2 * 3


def test_equivalence_small_batch(tmp_path):
    assert run(tmp_path, "equivalence", "--replicas", "6") == EXIT_OK
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["estimate"] == 0 and set(rep["per_lambda"]) == {"0.5", "1", "2"}


def test_equivalence_empty_batch_is_rejected(tmp_path):
    assert run(tmp_path, "equivalence", "--replicas", "0") == EXIT_CONFIG


def test_oracle_coalescing_csv(tmp_path):
    assert run(tmp_path, "oracle", "coalescing", "--window-lo", "-1", "--window-hi", "0", "--replicas", "2",
               "--grid-step", "0.05", "--dt", "0.001") == EXIT_OK
    assert (tmp_path / "continuum.csv").read_text().startswith("replica,t,position,mass,frame")


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "slowstart", "simulate", "--seed", "2", "--out-dir", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "manifest.json").exists()
