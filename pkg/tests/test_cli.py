import json
import subprocess
import sys

import pytest

from clref.cli import main
from clref.harness.persist import read_csv

SMALL = {
    "network": {"layer_sizes": [8, 12, 2], "activation": "relu"},
    "objective": {"method": "er", "alpha": 1.0},
    "refresh": {"gamma": 0.03, "steps": 1, "interval": 2},
    "stream": {"kind": "synthetic_gaussian", "n_tasks": 2, "dim": 8, "n_train": 60, "n_test": 60,
               "scenario": "domain_il"},
    "batch_size": 16,
    "buffer_capacity": 30,
    "seeds": [0, 1],
}


@pytest.fixture
def cfg(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(dict(SMALL, output=str(tmp_path / "out"))))
    return path


def test_run(cfg, tmp_path, capsys):
    assert main(["run", "--config", str(cfg)]) == 0
    out = tmp_path / "out"
    rows = read_csv(out / "results.csv")
    assert [r["seed"] for r in rows] == ["0", "1"]
    assert (out / "run-er_refresh-seed1.json").exists()
    assert (out / "matrix-er_refresh-seed0.png").stat().st_size > 0
    assert "mean ACC" in capsys.readouterr().out


def test_run_single_seed_and_out(cfg, tmp_path):
    assert main(["run", "--config", str(cfg), "--seed", "7", "--out", str(tmp_path / "other")]) == 0
    assert [r["seed"] for r in read_csv(tmp_path / "other" / "results.csv")] == ["7"]


def test_sweep(cfg, tmp_path, capsys):
    assert main(["sweep", "--config", str(cfg), "--gamma", "0.02,0.04", "--steps", "1,2"]) == 0
    doc = json.loads((tmp_path / "out" / "sweep.json").read_text())
    assert [(r["steps"], r["gamma"]) for r in doc["grid"]] == [(1, 0.02), (1, 0.04), (2, 0.02), (2, 0.04)]
    assert (tmp_path / "out" / "sweep.png").exists()


def test_gradcheck(capsys):
    assert main(["gradcheck", "--instances", "12"]) == 0
    assert "12/12 instances below" in capsys.readouterr().out


def test_theory(tmp_path, capsys):
    path = tmp_path / "theory.json"
    path.write_text(json.dumps({"kind": "quadratic", "fisher_source": "random", "n_instances": 4}))
    assert main(["theory", "--config", str(path), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "cosine" in out and "instance" in out
    doc = json.loads((tmp_path / "theory.json").read_text())
    assert len(doc["instances"]) == 4
    assert (tmp_path / "theory.png").exists()


def test_theory_rejects_unknown_keys(tmp_path, capsys):
    path = tmp_path / "theory.json"
    path.write_text(json.dumps({"kind": "quadratic", "temperature": 1}))
    assert main(["theory", "--config", str(path)]) == 2
    assert "temperature" in capsys.readouterr().err


def test_bench(cfg, tmp_path, capsys):
    assert main(["bench", "--config", str(cfg)]) == 0
    doc = json.loads((tmp_path / "out" / "bench.json").read_text())
    assert doc["ratio"] > 0 and len(doc["seconds"]["on"]) == 2


def test_bad_config_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"epochz": 1}))
    assert main(["run", "--config", str(path)]) == 2
    assert "epochz" in capsys.readouterr().err


def test_console_script_entry_point():
    out = subprocess.run([sys.executable, "-m", "clref.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("run", "sweep", "gradcheck", "theory", "bench"):
        assert cmd in out.stdout
