import json
import subprocess
import sys

import pytest

from edgetwin.cli import main
from edgetwin.forecaster import DisplacementForecaster
from edgetwin.trace import parse_trace

SMALL = {
    "seed": 2,
    "horizons": [1, 5],
    "windows": [1, 5],
    "generator": {"vehicles": 8, "steps": 400, "n_autonomous": 2, "road_length": 200.0},
    "features": {"history": 5, "train_stride": 4, "eval_stride": 4},
    "learner": {"n_trees": 8, "max_depth": 3},
    "hazard": {"horizon": 10},
    "simulate": {"max_frames": 60},
    "topology": {"n_fogs": 4, "fog_span": 100.0,
                 "scenarios": [{"name": "pair", "fogs": [2, 3]}, {"name": "cam", "cams": ["P2"]}]},
}


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(SMALL))
    return p


def run(cfg_file, cmd, out, *sets):
    args = [cmd, "--config", str(cfg_file), "--out", str(out)]
    for s in sets:
        args += ["--set", s]
    return main(args)


def test_generate_is_deterministic_and_parses_back(cfg_file, tmp_path):
    assert run(cfg_file, "generate", tmp_path / "a") == 0
    assert run(cfg_file, "generate", tmp_path / "b") == 0
    a = (tmp_path / "a" / "trace.csv").read_bytes()
    assert a == (tmp_path / "b" / "trace.csv").read_bytes()
    tr = parse_trace(tmp_path / "a" / "trace.csv")
    assert len(tr) == 8 * 400


def test_generate_zero_vehicles(cfg_file, tmp_path):
    assert run(cfg_file, "generate", tmp_path, "generator.vehicles=0",
               "generator.n_autonomous=0") == 0
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert len(lines) == 1 and lines[0].startswith("frame,id,")


def test_train_eval_simulate(cfg_file, tmp_path):
    out = tmp_path / "run"
    assert run(cfg_file, "train", out) == 0
    files = sorted(p.name for p in (out / "models").iterdir())
    assert files == ["model_h1.json", "model_h5.json"]
    log = json.loads((out / "train_log.json").read_text())
    for per_model in log.values():
        for losses in per_model.values():
            assert len(losses) == 9
            assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))
    m = DisplacementForecaster.load(out / "models" / "model_h1.json")
    assert m.horizon == 1 and m.history == 5

    assert run(cfg_file, "eval", out) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    rep = metrics["eval"]["report"]["horizons"]
    assert set(rep) == {"1", "5"}
    assert all("naive" in r and "model" in r for r in rep.values())
    assert set(metrics["eval"]["speculative"]) == {"0.01", "0.05", "0.1", "0.5"}

    assert run(cfg_file, "simulate", out) == 0
    lines = (out / "directives.jsonl").read_text().splitlines()
    assert len(lines) == 60
    rec = json.loads(lines[0])
    assert rec["frame"] - rec["capture_frame"] == 5
    metrics = json.loads((out / "metrics.json").read_text())
    assert {"train", "eval", "simulate", "version"} <= set(metrics)
    assert metrics["simulate"]["pipeline"]["allocation"]["duplicate_grants"] == 0


def test_train_single_horizon(cfg_file, tmp_path):
    assert run(cfg_file, "train", tmp_path, "horizons=[1]") == 0
    assert [p.name for p in (tmp_path / "models").iterdir()] == ["model_h1.json"]


def test_eval_oracle_and_transfer(cfg_file, tmp_path):
    assert run(cfg_file, "eval", tmp_path, "eval.predictor=\"oracle\"",
               "eval.transfer={\"vehicles\": 6}") == 0
    ev = json.loads((tmp_path / "metrics.json").read_text())["eval"]
    for r in ev["report"]["horizons"].values():
        assert r["model"]["mean"] == 0.0 and r["naive"]["mean"] > 0
    t = ev["transfer"]
    assert t["mean_error_a"] == 0.0 and t["mean_error_b"] == 0.0 and t["ratio"] is None


def test_faults(cfg_file, tmp_path):
    assert run(cfg_file, "faults", tmp_path) == 0
    cov = json.loads((tmp_path / "coverage.json").read_text())
    assert cov["exhaustive"]["subsets"] == 16
    assert cov["exhaustive"]["matches_adjacency_rule"] is True
    assert [s["operational"] for s in cov["scenarios"]] == [False, True]
    assert all(cov["single_camera_failures"].values())


def test_exit_codes(cfg_file, tmp_path, capsys):
    assert run(cfg_file, "generate", tmp_path, "generator.bogus=1") == 2
    assert "generator.bogus" in capsys.readouterr().err
    assert run(cfg_file, "generate", tmp_path, "generator.speed_range=[1, 99]") == 2
    assert "generator" in capsys.readouterr().err
    # no models trained yet: data error
    assert run(cfg_file, "eval", tmp_path / "empty") == 3
    # a trace file with a missing column
    bad = tmp_path / "bad.csv"
    bad.write_text("frame,id,x\n0,1,2\n")
    assert run(cfg_file, "eval", tmp_path, f"trace.path=\"{bad}\"",
               "eval.predictor=\"oracle\"") == 3
    assert "trace" in capsys.readouterr().err
    assert run(cfg_file, "faults", tmp_path, "topology.n_fogs=1") == 2
    assert main(["generate", "--config", str(tmp_path / "nope.json")]) == 2


def test_console_script_entry_point(cfg_file, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "edgetwin.cli", "faults", "--config",
                           str(cfg_file), "--out", str(tmp_path), "--set", "topology.n_fogs=0"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert "topology" in proc.stderr
