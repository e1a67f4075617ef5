from __future__ import annotations

import hashlib
import json

import pytest

from sigwatch import cli

TINY_CONFIG = {
    "seed": 0,
    "n_known": 3,
    "n_abnormal": 2,
    "bursts_per_emitter": 12,
    "snr_db": 25.0,
    "hidden": [16, 8],
    "epochs": 4,
    "learning_rate": 0.05,
    "batch_size": 8,
    "sweep_tprs": [0.8, 0.9],
    "sweep_cusum_h": [3.0, 5.0],
    "sweep_ewma_L": [3.0],
    "sweep_window_lengths": [20],
    "change_point": 50,
    "n_trials": 150,
    "max_len": 250,
    "inc_task2_classes": 2,
    "inc_epochs": 2,
    "inc_batch_size": 8,
    "coverage_samples": 2000,
}


@pytest.fixture()
def tiny_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(TINY_CONFIG))
    return str(path)


def file_hashes(out_dir):
    return {
        p.name: hashlib.sha256(p.read_bytes()).hexdigest()
        for p in out_dir.iterdir()
        if p.name != "report.json"
    }


def test_print_config_is_valid_json(capsys):
    assert cli.main(["--print-config"]) == 0
    parsed = json.loads(capsys.readouterr().out)
    assert parsed == cli.DEFAULT_CONFIG


def test_unknown_config_key_fails(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"not_a_key": 1}))
    code = cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "out")])
    assert code == 1
    assert "unknown config keys" in capsys.readouterr().err


def test_train_outputs_and_reproducibility(tmp_path, tiny_config):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert cli.main(["train", "--config", tiny_config, "--out", str(out_a)]) == 0
    assert cli.main(["train", "--config", tiny_config, "--out", str(out_b)]) == 0
    for name in ("model_regular.json", "model_zerobias.json", "history.csv", "report.json"):
        assert (out_a / name).exists()
    assert file_hashes(out_a) == file_hashes(out_b)
    report = json.loads((out_a / "report.json").read_text())
    assert "accuracy_gap" in report["metrics"]
    assert set(report["files"]) == {"model_regular.json", "model_zerobias.json", "history.csv"}
    for name, digest in report["files"].items():
        assert hashlib.sha256((out_a / name).read_bytes()).hexdigest() == digest


def test_convert_requires_zero_bias_model(tmp_path, tiny_config, capsys):
    out = tmp_path / "out"
    assert cli.main(["train", "--config", tiny_config, "--out", str(out)]) == 0
    code = cli.main(
        ["convert", "--config", tiny_config, "--out", str(tmp_path / "c"),
         "--model", str(out / "model_regular.json")]
    )
    assert code == 1
    assert "zero-bias" in capsys.readouterr().err
    # failed run cleans up its partial outputs
    leftover = [p for p in (tmp_path / "c").iterdir()] if (tmp_path / "c").exists() else []
    assert leftover == []


def test_convert_reports_measured_and_predicted_rates(tmp_path, tiny_config):
    out = tmp_path / "out"
    assert cli.main(["train", "--config", tiny_config, "--out", str(out)]) == 0
    conv = tmp_path / "conv"
    code = cli.main(
        ["convert", "--config", tiny_config, "--out", str(conv),
         "--model", str(out / "model_zerobias.json")]
    )
    assert code == 0
    rates = json.loads((conv / "rates.json").read_text())
    assert {"fpr", "tpr", "fnr"} <= set(rates["measured"])
    assert {"fpr", "tpr"} <= set(rates["predicted_from_accuracy"])
    assert (conv / "profile.json").exists()


def test_simulate_row_counts(tmp_path, tiny_config):
    out = tmp_path / "sim"
    assert cli.main(["simulate", "--config", tiny_config, "--out", str(out)]) == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    # one row per algorithm parameter per rate point
    per_point = len(TINY_CONFIG["sweep_cusum_h"]) + len(TINY_CONFIG["sweep_ewma_L"]) + len(
        TINY_CONFIG["sweep_window_lengths"]
    )
    assert len(lines) == 1 + per_point * len(TINY_CONFIG["sweep_tprs"])


def test_incremental_emits_all_histories(tmp_path, tiny_config):
    out = tmp_path / "inc"
    assert cli.main(["incremental", "--config", tiny_config, "--out", str(out)]) == 0
    stab = sorted(p.name for p in out.glob("history_*_stab.csv"))
    raw = sorted(p.name for p in out.glob("history_*_raw.csv"))
    # four strategies for each of the two head types, per stabilization variant
    assert len(stab) == 8
    assert len(raw) == 8
    header = (out / stab[0]).read_text().splitlines()[0]
    assert header == "epoch,strategy,task1_acc,task2_acc,fisher_loss"
    assert (out / "weights.csv").exists()
    report = json.loads((out / "report.json").read_text())
    assert report["metrics"]["runs"] == 16


def test_coverage_outputs(tmp_path, tiny_config):
    out = tmp_path / "out"
    assert cli.main(["train", "--config", tiny_config, "--out", str(out)]) == 0
    cov = tmp_path / "cov"
    code = cli.main(
        ["coverage", "--config", tiny_config, "--out", str(cov), "--models-dir", str(out)]
    )
    assert code == 0
    report = json.loads((cov / "report.json").read_text())
    for head in ("regular", "zero_bias"):
        fractions = report["metrics"][head]["fractions"]
        assert len(fractions) == TINY_CONFIG["n_known"]
        assert abs(sum(fractions) - 1.0) < 1e-12
    assert "zero_bias_variance_leq_regular" in report["metrics"]
    assert (cov / "coverage.csv").exists()


def test_seed_override_changes_outputs(tmp_path, tiny_config):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert cli.main(["simulate", "--config", tiny_config, "--out", str(out_a)]) == 0
    assert cli.main(["simulate", "--config", tiny_config, "--out", str(out_b), "--seed", "7"]) == 0
    assert file_hashes(out_a) != file_hashes(out_b)
    report = json.loads((out_b / "report.json").read_text())
    assert report["config"]["seed"] == 7
