"""CLI orchestration: exit codes, outputs, manifests, determinism."""

import json
import os
from pathlib import Path

import pytest

from debiaslab.cli import main

RHOS = [0.0, 0.6]


def write_config(path, config):
    path.write_text(json.dumps(config), encoding="utf-8")
    return str(path)


def run(*argv):
    return main(list(argv))


def test_missing_config_is_usage_error(tmp_path):
    code = run("simulate", "--config", str(tmp_path / "nope.json"), "--out-dir", str(tmp_path))
    assert code == 2


def test_invalid_json_config_is_usage_error(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text("{not json", encoding="utf-8")
    assert run("simulate", "--config", str(cfg), "--out-dir", str(tmp_path)) == 2


def test_simulate_rational_writes_panels_and_manifest(tmp_path):
    cfg = write_config(
        tmp_path / "sim.json",
        {"rhos": RHOS, "sessions_per_cell": 3, "agent": {"kind": "rational"}, "seed": 11},
    )
    out = tmp_path / "out"
    assert run("simulate", "--config", cfg, "--out-dir", str(out)) == 0
    for rho in RHOS:
        panel = out / f"panel_rho{rho:g}.csv"
        assert panel.exists()
        assert len(panel.read_text().splitlines()) == 3 * 39 + 1
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert manifest["seed"] == 11
    assert len(manifest["outputs"]) == 2


def test_simulate_is_deterministic_across_runs(tmp_path):
    cfg = write_config(
        tmp_path / "sim.json",
        {"rhos": [0.4], "sessions_per_cell": 2, "agent": {"kind": "extrapolative", "theta": 0.5}},
    )
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert run("simulate", "--config", cfg, "--out-dir", str(out1)) == 0
    assert run("simulate", "--config", cfg, "--out-dir", str(out2)) == 0
    assert (out1 / "panel_rho0.4.csv").read_bytes() == (out2 / "panel_rho0.4.csv").read_bytes()


def dataset_config(tmp_path, n=2):
    return write_config(
        tmp_path / "data.json",
        {
            "task": "ar1",
            "rhos": RHOS,
            "seed": 5,
            "plan": {
                "ar1": {
                    "train_series_per_rho": n,
                    "val_series_per_rho": 1,
                    "test_series_per_rho": 1,
                }
            },
        },
    )


def test_build_dataset_writes_splits_and_clean_hygiene(tmp_path):
    out = tmp_path / "data"
    assert run("build-dataset", "--config", dataset_config(tmp_path), "--out-dir", str(out)) == 0
    for split, count in (("train", 2 * 2 * 40), ("val", 1 * 2 * 40), ("test", 1 * 2 * 40)):
        lines = (out / f"ar1_{split}.jsonl").read_text(encoding="utf-8").splitlines()
        assert len(lines) == count
    assert "clean" in (out / "hygiene_report.txt").read_text()


def test_build_dataset_overlapping_plan_fails_nonzero(tmp_path):
    cfg = write_config(
        tmp_path / "plan.json",
        {
            "task": "stock",
            "plan": {
                "stock": {
                    "train": ["2001-01", "2011-12"],
                    "val": ["2011-06", "2015-12"],
                    "test": ["2016-01", "2024-12"],
                }
            },
        },
    )
    assert run("build-dataset", "--config", cfg, "--out-dir", str(tmp_path / "x")) == 2


def test_build_dataset_stock_synth(tmp_path):
    cfg = write_config(
        tmp_path / "stock.json",
        {
            "task": "stock",
            "seed": 7,
            "synth": {"n_firms": 4, "n_months": 40, "phi": -0.1, "vol": 0.08},
            "plan": {
                "stock": {
                    "train": ["2001-01", "2002-06"],
                    "val": ["2002-07", "2003-06"],
                    "test": ["2003-07", "2004-04"],
                }
            },
        },
    )
    out = tmp_path / "stock_out"
    assert run("build-dataset", "--config", cfg, "--out-dir", str(out)) == 0
    assert (out / "stock_train.jsonl").exists()


def train_pipeline(tmp_path, mode="pretrain", base=None):
    data_dir = tmp_path / "data"
    if not (data_dir / "ar1_train.jsonl").exists():
        assert run("build-dataset", "--config", dataset_config(tmp_path), "--out-dir", str(data_dir)) == 0
    config = {
        "mode": mode,
        "task": "ar1",
        "train_jsonl": str(data_dir / "ar1_train.jsonl"),
        "val_jsonl": str(data_dir / "ar1_val.jsonl"),
        "feature_window": 40,
        "hidden_width": 8,
        "max_epochs": 1,
        "eval_every": 2,
        "patience": 1,
        "batch_size": 40,
        "learning_rate": 0.01,
        "seed": 1,
    }
    if base:
        config["base_checkpoint"] = base
        config["rank"] = 2
    cfg = write_config(tmp_path / f"train_{mode}.json", config)
    out = tmp_path / f"run_{mode}"
    assert run("train", "--config", cfg, "--out-dir", str(out)) == 0
    return out


def test_train_pretrain_then_sft_and_evaluate(tmp_path):
    pre = train_pipeline(tmp_path, "pretrain")
    ckpt = pre / "checkpoint.npz"
    assert ckpt.exists()
    report = (pre / "train_report.csv").read_text().splitlines()
    assert report[0] == "step,train_loss,val_loss"
    assert len(report) >= 2

    sft = train_pipeline(tmp_path, "sft", base=str(ckpt))
    assert (sft / "checkpoint.npz").exists()

    eval_cfg = write_config(
        tmp_path / "eval.json",
        {
            "mode": "checkpoint",
            "checkpoint": str(sft / "checkpoint.npz"),
            "rhos": RHOS,
            "sessions_per_cell": 2,
            "seed": 5,
        },
    )
    out = tmp_path / "eval_out"
    assert run("evaluate", "--config", eval_cfg, "--out-dir", str(out)) == 0
    assert (out / "error_revision_table.csv").exists()
    plot = (out / "error_revision_plot.csv").read_text().splitlines()
    assert plot[0] == "rho,b,ci_low,ci_high"
    assert len(plot) == len(RHOS) + 1


def test_train_missing_jsonl_is_data_error(tmp_path):
    cfg = write_config(
        tmp_path / "t.json",
        {"mode": "pretrain", "task": "ar1", "train_jsonl": str(tmp_path / "none.jsonl"),
         "val_jsonl": str(tmp_path / "none.jsonl")},
    )
    code = run("train", "--config", cfg, "--out-dir", str(tmp_path / "o"))
    assert code == 3


def test_evaluate_panels_mode(tmp_path):
    sim_cfg = write_config(
        tmp_path / "sim.json",
        {"rhos": RHOS, "sessions_per_cell": 2, "agent": {"kind": "extrapolative", "theta": 0.5}},
    )
    sim_out = tmp_path / "panels"
    assert run("simulate", "--config", sim_cfg, "--out-dir", str(sim_out)) == 0
    eval_cfg = write_config(
        tmp_path / "eval.json",
        {
            "mode": "panels",
            "reference": "base",
            "panels": {f"{rho:g}": str(sim_out / f"panel_rho{rho:g}.csv") for rho in RHOS},
        },
    )
    out = tmp_path / "tables"
    assert run("evaluate", "--config", eval_cfg, "--out-dir", str(out)) == 0
    table = (out / "error_revision_table.csv").read_text().splitlines()
    assert table[0] == ",rho=0,rho=0.6"
    assert table[1].startswith("b,")
    assert any(line.startswith("reference_b,") for line in table)
    assert (out / "descriptives.csv").exists()


def test_evaluate_unknown_mode_is_usage_error(tmp_path):
    cfg = write_config(tmp_path / "e.json", {"mode": "banana"})
    assert run("evaluate", "--config", cfg, "--out-dir", str(tmp_path / "o")) == 2


def test_report_command(tmp_path, capsys):
    cfg = write_config(
        tmp_path / "sim.json",
        {"rhos": [0.2], "sessions_per_cell": 2, "agent": {"kind": "rational"}},
    )
    out = tmp_path / "run"
    assert run("simulate", "--config", cfg, "--out-dir", str(out)) == 0
    capsys.readouterr()
    assert run("report", "--run-dir", str(out)) == 0
    text = capsys.readouterr().out
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config_hash"] in text
    assert "panel_rho0.2.csv" in text
    assert (out / "summary.txt").exists()


def test_report_missing_dir_fails(tmp_path):
    assert run("report", "--run-dir", str(tmp_path / "ghost")) == 3


def test_series_experiment_mode_smoke(tmp_path):
    # shrunken full replication through the CLI config knobs
    cfg = write_config(
        tmp_path / "series.json",
        {
            "mode": "series-experiment",
            "rhos": [0.0, 1.0],
            "sessions_per_cell": 2,
            "hidden_width": 8,
            "lora_rank": 2,
            "pretrain_max_epochs": 1, "pretrain_eval_every": 8, "pretrain_patience": 1,
            "sft_max_epochs": 1, "sft_eval_every": 8, "sft_patience": 1,
            "plan": {"ar1": {"train_series_per_rho": 2, "val_series_per_rho": 1,
                              "test_series_per_rho": 2}},
        },
    )
    out = tmp_path / "series_out"
    assert run("evaluate", "--config", cfg, "--out-dir", str(out), "--seed", "9") == 0
    for prefix in ("base_", "sft_"):
        assert (out / f"{prefix}error_revision_table.csv").exists()
        assert (out / f"{prefix}error_revision_plot.csv").exists()


def test_stock_experiment_mode_smoke(tmp_path):
    cfg = write_config(
        tmp_path / "stock.json",
        {
            "mode": "stock-experiment",
            "n_firms": 20,
            "n_months": 40,
            "hidden_width": 8,
            "lora_rank": 2,
            "pretrain_max_epochs": 2, "pretrain_eval_every": 4, "pretrain_patience": 2,
            "sft_max_epochs": 2, "sft_eval_every": 4, "sft_patience": 2,
        },
    )
    out = tmp_path / "stock_out"
    assert run("evaluate", "--config", cfg, "--out-dir", str(out), "--seed", "9") == 0
    table = (out / "sft_extrapolation_table.csv").read_text().splitlines()
    assert table[0] == "term,coef,t"
    assert any(line.startswith("r_lag0,") for line in table)
    assert any(line.startswith("cluster,two-way") for line in table)
