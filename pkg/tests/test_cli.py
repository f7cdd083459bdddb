import json
from pathlib import Path

import numpy as np
import pytest

from cgnn.cli import main
from cgnn.datasets import load_dataset


@pytest.fixture
def workspace(tmp_path):
    rc = main([
        "gen-synth", "--blocks", "2", "--nodes-per-block", "20", "--p-in", "0.4",
        "--p-out", "0.05", "--feature-dim", "6", "--signal", "0.6", "--seed", "11",
        "--out", str(tmp_path / "data"),
    ])
    assert rc == 0
    cfg = {
        "dataset_path": "data",
        "output_dir": "out",
        "variant": "cgnn",
        "lr": 0.01,
        "optimizer": "adam",
        "epochs": 5,
        "t1": 3.0,
        "dropout": 0.2,
        "seed": 1,
        "hidden_dim": 6,
    }
    (tmp_path / "cfg.json").write_text(json.dumps(cfg), encoding="utf-8")
    return tmp_path


def test_gen_synth_round_trip_and_idempotent(tmp_path):
    args = ["gen-synth", "--blocks", "2", "--nodes-per-block", "15", "--p-in", "0.3",
            "--p-out", "0.05", "--feature-dim", "4", "--signal", "0.5", "--seed", "3"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    ds = load_dataset(tmp_path / "a")
    assert ds.num_nodes == 30
    for name in ("graph.tsv", "features.tsv", "labels.tsv", "split.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_gen_synth_disassortative(tmp_path):
    rc = main(["gen-synth", "--blocks", "2", "--nodes-per-block", "10", "--p-in", "0.05",
               "--p-out", "0.3", "--feature-dim", "4", "--signal", "0.5",
               "--out", str(tmp_path / "d")])
    assert rc == 0


def test_train_outputs_and_determinism(workspace):
    cfg_path = str(workspace / "cfg.json")
    assert main(["train", "--config", cfg_path, "--out", str(workspace / "r1")]) == 0
    assert main(["train", "--config", cfg_path, "--out", str(workspace / "r2")]) == 0
    m1 = (workspace / "r1" / "metrics.csv").read_bytes()
    m2 = (workspace / "r2" / "metrics.csv").read_bytes()
    assert m1 == m2
    header = m1.decode().splitlines()[0]
    assert header == "epoch,train_loss,train_acc,val_acc,test_acc"
    assert (workspace / "r1" / "checkpoint.manifest").exists()
    assert (workspace / "r1" / "checkpoint.bin").exists()
    assert (workspace / "r1" / "metrics.png").exists()
    summary = json.loads((workspace / "r1" / "summary.json").read_text())
    assert {"best_val_acc", "test_acc_at_best_val", "seed", "config"} <= set(summary)


def test_train_seed_override_changes_metrics(workspace):
    cfg_path = str(workspace / "cfg.json")
    assert main(["train", "--config", cfg_path, "--out", str(workspace / "s1")]) == 0
    assert main(["train", "--config", cfg_path, "--out", str(workspace / "s2"),
                 "--seed", "99"]) == 0
    assert (workspace / "s1" / "metrics.csv").read_bytes() != \
        (workspace / "s2" / "metrics.csv").read_bytes()
    assert json.loads((workspace / "s2" / "summary.json").read_text())["seed"] == 99


def test_missing_dataset_path_names_it(workspace, capsys):
    cfg = json.loads((workspace / "cfg.json").read_text())
    cfg["dataset_path"] = "nowhere"
    (workspace / "bad.json").write_text(json.dumps(cfg), encoding="utf-8")
    rc = main(["train", "--config", str(workspace / "bad.json")])
    assert rc == 1
    assert "nowhere" in capsys.readouterr().err


def test_unknown_config_key_rejected(workspace, capsys):
    cfg = json.loads((workspace / "cfg.json").read_text())
    cfg["learning_rate"] = 0.1
    (workspace / "bad.json").write_text(json.dumps(cfg), encoding="utf-8")
    rc = main(["train", "--config", str(workspace / "bad.json")])
    assert rc == 1
    assert "learning_rate" in capsys.readouterr().err


def test_numeric_abort_exit_code(workspace):
    cfg = json.loads((workspace / "cfg.json").read_text())
    cfg["t1"] = 30000.0  # few fixed steps over a huge horizon: guaranteed overflow
    (workspace / "explode.json").write_text(json.dumps(cfg), encoding="utf-8")
    rc = main(["train", "--config", str(workspace / "explode.json")])
    assert rc == 2


def test_eval_prints_splits(workspace, capsys):
    cfg_path = str(workspace / "cfg.json")
    assert main(["train", "--config", cfg_path]) == 0
    assert main(["eval", "--config", cfg_path]) == 0
    out = capsys.readouterr().out
    for split in ("train", "val", "test"):
        assert f"split={split} accuracy=" in out


def test_verify_gate_and_fault_injection(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out
    lines = [ln for ln in out.splitlines() if ln]
    assert lines[0] == "name,max_abs_err,max_rel_err,tolerance,pass"
    assert len(lines) - 1 >= 9
    assert all(ln.endswith(",pass") for ln in lines[1:])

    assert main(["verify", "--zero-tolerance"]) == 1
    out = capsys.readouterr().out
    assert any(ln.endswith(",fail") for ln in out.splitlines())


def test_sweep_time_shape(workspace):
    cfg_path = str(workspace / "cfg.json")
    rc = main(["sweep-time", "--config", cfg_path, "--t-list", "1,2",
               "--variants", "cgnn,cgnn-no-restart", "--out", str(workspace / "sw")])
    assert rc == 0
    lines = (workspace / "sw" / "sweep.csv").read_text().splitlines()
    assert lines[0] == "variant,t1,seed,test_acc"
    assert len(lines) == 1 + 4
    assert lines[1].startswith("cgnn,1,") and lines[2].startswith("cgnn,2,")
    assert lines[3].startswith("cgnn-no-restart,1,")
    assert (workspace / "sw" / "sweep.png").exists()


def test_sweep_time_parallel_matches_serial(workspace):
    cfg_path = str(workspace / "cfg.json")
    assert main(["sweep-time", "--config", cfg_path, "--t-list", "1,2",
                 "--out", str(workspace / "ser")]) == 0
    assert main(["sweep-time", "--config", cfg_path, "--t-list", "1,2",
                 "--jobs", "2", "--out", str(workspace / "par")]) == 0
    assert (workspace / "ser" / "sweep.csv").read_bytes() == \
        (workspace / "par" / "sweep.csv").read_bytes()


def test_mem_report_rows_and_empty_t_list(workspace):
    cfg_path = str(workspace / "cfg.json")
    rc = main(["mem-report", "--config", cfg_path, "--t-list", "2,4",
               "--out", str(workspace / "mem")])
    assert rc == 0
    lines = (workspace / "mem" / "mem.csv").read_text().splitlines()
    assert lines[0] == "variant,t1,steps,peak_live"
    assert len(lines) == 1 + 4
    assert (workspace / "mem" / "mem.png").exists()

    assert main(["mem-report", "--config", cfg_path, "--t-list", "",
                 "--out", str(workspace / "mem2")]) == 1
