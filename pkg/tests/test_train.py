"""Training-loop contracts: early stopping, determinism, frozen base."""

import numpy as np
import pytest

from debiaslab.errors import ConfigurationError, DataError, TrainingError
from debiaslab.net import (
    attach_lora,
    base_checksum,
    forward_batch,
    init_dense,
    init_dense as _init,
    mse_loss,
)
from debiaslab.train import TrainConfig, train_dense, train_sft, write_report_csv

RNG = np.random.default_rng(5)


def toy_problem(n=256, k=4, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, k))
    w = rng.normal(size=(k, 2))
    Y = X @ w + rng.normal(scale=0.05, size=(n, 2))
    return (X[: n // 2], Y[: n // 2]), (X[n // 2 :], Y[n // 2 :])


def test_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(patience=0)
    with pytest.raises(ConfigurationError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigurationError):
        TrainConfig(momentum=1.0)


def test_lr_zero_patience_one_stops_at_first_eval():
    train, val = toy_problem()
    adapted = attach_lora(init_dense([4, 6, 2], seed=1), rank=2, seed=2)
    cfg = TrainConfig(learning_rate=0.0, patience=1, eval_every=1, max_epochs=2, batch_size=32)
    _, report = train_sft(adapted, train, val, cfg)
    assert report.stopped_early
    assert report.best_step == 0
    assert len(report.evals) == 2  # the step-0 baseline plus one non-improving eval


def test_sft_improves_validation_loss():
    train, val = toy_problem()
    adapted = attach_lora(init_dense([4, 8, 2], seed=3), rank=3, seed=4)
    initial = mse_loss(adapted, *val)
    cfg = TrainConfig(learning_rate=0.05, patience=8, eval_every=4, max_epochs=30, batch_size=32, seed=9)
    trained, report = train_sft(adapted, train, val, cfg)
    assert report.best_val_loss < initial
    assert mse_loss(trained, *val) == pytest.approx(report.best_val_loss)


def test_training_is_deterministic():
    train, val = toy_problem()

    def run():
        adapted = attach_lora(init_dense([4, 8, 2], seed=3), rank=2, seed=4)
        cfg = TrainConfig(learning_rate=0.05, patience=4, eval_every=4, max_epochs=8, batch_size=32, seed=11)
        return train_sft(adapted, train, val, cfg)[1]

    r1, r2 = run(), run()
    assert r1.best_step == r2.best_step
    assert [e.val_loss for e in r1.evals] == [e.val_loss for e in r2.evals]
    assert [e.train_loss for e in r1.evals] == [e.train_loss for e in r2.evals]


def test_base_weights_frozen_through_sft():
    train, val = toy_problem()
    base = init_dense([4, 8, 2], seed=13)
    checksum = base_checksum(base)
    adapted = attach_lora(base, rank=3, seed=14)
    cfg = TrainConfig(learning_rate=0.05, patience=4, eval_every=8, max_epochs=10, batch_size=32)
    trained, _ = train_sft(adapted, train, val, cfg)
    assert base_checksum(base) == checksum
    assert base_checksum(trained) == checksum
    assert any(np.any(ad.B != 0) for ad in trained.adapters)  # adapters did move


def test_dense_training_moves_base_weights():
    train, val = toy_problem()
    net = init_dense([4, 8, 2], seed=15)
    checksum = base_checksum(net)
    cfg = TrainConfig(learning_rate=0.05, patience=4, eval_every=8, max_epochs=5, batch_size=32)
    trained, report = train_dense(net, train, val, cfg)
    assert base_checksum(trained) != checksum
    assert report.best_val_loss < report.evals[0].val_loss


def test_early_stop_contract_evals_after_best():
    train, val = toy_problem()
    adapted = attach_lora(init_dense([4, 8, 2], seed=16), rank=2, seed=17)
    patience = 3
    cfg = TrainConfig(learning_rate=0.05, patience=patience, eval_every=2, max_epochs=50, batch_size=32)
    _, report = train_sft(adapted, train, val, cfg)
    best_index = next(i for i, e in enumerate(report.evals) if e.step == report.best_step)
    assert len(report.evals) - 1 - best_index <= patience


def test_best_step_attains_min_val_loss():
    train, val = toy_problem(seed=3)
    adapted = attach_lora(init_dense([4, 8, 2], seed=18), rank=2, seed=19)
    cfg = TrainConfig(learning_rate=0.08, patience=5, eval_every=3, max_epochs=20, batch_size=32)
    _, report = train_sft(adapted, train, val, cfg)
    min_val = min(e.val_loss for e in report.evals)
    assert report.best_val_loss == min_val
    best_eval = [e for e in report.evals if e.step == report.best_step][0]
    assert best_eval.val_loss == min_val


def test_divergence_raises_training_error_with_report():
    train, val = toy_problem()
    adapted = attach_lora(init_dense([4, 8, 2], seed=20), rank=3, seed=21)
    cfg = TrainConfig(learning_rate=1e6, patience=10, eval_every=2, max_epochs=5, batch_size=32)
    with pytest.raises(TrainingError) as err:
        train_sft(adapted, train, val, cfg)
    assert err.value.report is not None
    assert len(err.value.report.evals) >= 1


def test_empty_dataset_rejected():
    adapted = attach_lora(init_dense([4, 6, 2], seed=22), rank=2)
    with pytest.raises(DataError):
        train_sft(adapted, (np.zeros((0, 4)), np.zeros((0, 2))), toy_problem()[1], TrainConfig())


def test_mode_type_checks():
    train, val = toy_problem()
    with pytest.raises(ConfigurationError):
        train_sft(init_dense([4, 2], seed=1), train, val, TrainConfig())
    with pytest.raises(ConfigurationError):
        train_dense(attach_lora(init_dense([4, 6, 2], seed=1), rank=1), train, val, TrainConfig())


def test_returned_net_is_best_snapshot_not_last():
    # force overfitting past the best point, then confirm the snapshot wins
    train, val = toy_problem(n=64, seed=7)
    adapted = attach_lora(init_dense([4, 12, 2], seed=23), rank=3, seed=24)
    cfg = TrainConfig(learning_rate=0.2, patience=6, eval_every=1, max_epochs=40, batch_size=8, seed=1)
    trained, report = train_sft(adapted, train, val, cfg)
    assert mse_loss(trained, *val) == pytest.approx(report.best_val_loss, rel=1e-12)


def test_report_csv(tmp_path):
    train, val = toy_problem()
    adapted = attach_lora(init_dense([4, 6, 2], seed=25), rank=2)
    cfg = TrainConfig(learning_rate=0.05, patience=2, eval_every=4, max_epochs=3, batch_size=32)
    _, report = train_sft(adapted, train, val, cfg)
    path = tmp_path / "report.csv"
    write_report_csv(report, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "step,train_loss,val_loss"
    assert len(lines) == len(report.evals) + 1
