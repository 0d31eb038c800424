import json
import subprocess
import sys

import numpy as np
import pytest

from pinchcomp.cli import (load_config, ConfigError, run_convergence,
                           run_train, evaluate, main, _fmt)


def test_load_defaults():
    cfg = load_config(None, "desk", [])
    assert cfg.geometry["span"] == 80.0
    assert cfg.gml["epochs"] == 8          # desk scale
    assert cfg.experiment["power_grid_dbm"][0] == 12.0


def test_scale_selection():
    ci = load_config(None, "ci", [])
    assert ci.gml["inner_iterations"] == 3
    paper = load_config(None, "paper", [])
    assert paper.gml["epochs"] == 50
    with pytest.raises(ConfigError):
        load_config(None, "galactic", [])


def test_set_overrides():
    cfg = load_config(None, "ci", ["gml.epochs=2", "geometry.span=40.0",
                                   "experiment.sweep_seeds=0,1,2"])
    assert cfg.gml["epochs"] == 2
    assert cfg.geometry["span"] == 40.0
    assert cfg.experiment["sweep_seeds"] == [0, 1, 2]


def test_set_rejects_malformed():
    with pytest.raises(ConfigError):
        load_config(None, "ci", ["gml.epochs"])
    with pytest.raises(ConfigError):
        load_config(None, "ci", ["nonsense.key=1"])


def test_toml_config_file(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text("""
scale = "ci"

[geometry]
span = 60.0

[gml]
epochs = 1
""")
    cfg = load_config(str(path), "desk", [])
    assert cfg.scale == "ci"
    assert cfg.geometry["span"] == 60.0
    assert cfg.gml["epochs"] == 1


def test_missing_config_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/file.toml", "desk", [])


def test_float_formatting():
    assert _fmt(1.0) == "1"
    assert _fmt(0.123456789012345) == "0.123456789012"
    assert _fmt(3) == "3"


def test_convergence_row_count(tmp_path):
    """CI convergence: one row per outer iteration plus the reference row."""
    cfg = load_config(None, "ci", [])
    out = tmp_path / "conv.csv"
    run_convergence(cfg, seed=3, out_path=str(out))
    lines = out.read_text().strip().split("\n")
    assert lines[0].startswith("outer_iteration,")
    data = lines[1:]
    assert len(data) == 20 + 1          # 20 outer iterations + oracle row
    assert data[-1].startswith("oracle,")
    best = [float(r.split(",")[6]) for r in data[:-1]]
    assert all(b2 >= b1 for b1, b2 in zip(best, best[1:]))


def test_convergence_deterministic(tmp_path):
    cfg = load_config(None, "ci", ["gml.epochs=1", "experiment.oracle_restarts=2",
                                   "experiment.oracle_steps=40"])
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    run_convergence(cfg, seed=5, out_path=str(p1))
    run_convergence(cfg, seed=5, out_path=str(p2))
    assert p1.read_bytes() == p2.read_bytes()


def test_train_and_evaluate_round_trip(tmp_path):
    cfg = load_config(None, "ci", ["gml.epochs=2", "gml.outer_iterations=4"])
    sol = tmp_path / "sol.json"
    result = run_train(cfg, seed=4, out_path=str(sol))
    report = evaluate(cfg, str(sol), seed=4, out_path=str(tmp_path / "eval.json"))
    assert report["sum_rate"] == pytest.approx(result.best_sum_rate, rel=1e-12)
    assert report["power_feasible"]
    assert report["spacing_violations"] == 0
    assert report["range_violations"] == 0


def test_evaluate_schema_error_names_field(tmp_path):
    cfg = load_config(None, "ci", [])
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"scheme": "gml", "best": {"w_re": [[[0.1]]]}}))
    with pytest.raises(ConfigError, match="best.w_im"):
        evaluate(cfg, str(bad), seed=0, out_path=None)


def test_evaluate_rejects_invalid_json(tmp_path):
    cfg = load_config(None, "ci", [])
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        evaluate(cfg, str(bad), seed=0, out_path=None)


def test_main_exit_codes(tmp_path):
    # config error -> 2
    assert main(["train", "--set", "bogus.key=1"]) == 2
    # evaluate without --solution -> 2
    assert main(["evaluate"]) == 2
    # fine run -> 0
    out = tmp_path / "t.json"
    code = main(["train", "--scale", "ci", "--seed", "1", "--out", str(out),
                 "--set", "gml.epochs=1", "--set", "gml.outer_iterations=2"])
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["scheme"] == "gml"
    assert "trace" in doc and "networks" in doc


def test_cli_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "pinchcomp.cli", "train", "--scale", "ci",
         "--seed", "2", "--set", "gml.epochs=1",
         "--set", "gml.outer_iterations=2"],
        capture_output=True, text=True)
    assert proc.returncode == 0
    doc = json.loads(proc.stdout)
    assert doc["best"]["sum_rate"] > 0
