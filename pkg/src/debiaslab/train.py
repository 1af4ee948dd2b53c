"""Mini-batch training loops with validation-based early stopping.

`train_sft` updates only the adapter matrices of an AdaptedNet (the base
stays frozen, verified by checksum); `train_dense` updates every weight of
a plain DenseNet and is used to manufacture the biased base model. Both
stop once validation loss has failed to improve for `patience` consecutive
evaluations and return the best-validation snapshot.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError, TrainingError
from .net import (
    AdaptedNet,
    DenseNet,
    backprop,
    base_checksum,
    clone_adapters,
    clone_dense,
    mse_loss,
)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    batch_size: int = 64
    max_epochs: int = 50
    patience: int = 5
    eval_every: int = 200
    seed: int = 0
    momentum: float = 0.0

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "max_epochs", "eval_every"):
            if getattr(self, name) is None or getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative")
        if self.batch_size < 1 or self.max_epochs < 1 or self.eval_every < 1:
            raise ConfigurationError("batch_size, max_epochs, eval_every must be >= 1")
        if self.patience < 1:
            raise ConfigurationError(f"patience must be >= 1, got {self.patience}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError(f"momentum must be in [0, 1), got {self.momentum}")


@dataclass
class EvalPoint:
    step: int
    train_loss: float
    val_loss: float


@dataclass
class TrainReport:
    evals: list[EvalPoint] = field(default_factory=list)
    best_step: int = 0
    best_val_loss: float = float("inf")
    stopped_early: bool = False

    def rows(self):
        for e in self.evals:
            yield {"step": e.step, "train_loss": e.train_loss, "val_loss": e.val_loss}


def write_report_csv(report: TrainReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["step", "train_loss", "val_loss"])
        writer.writeheader()
        for row in report.rows():
            writer.writerow(row)


def _check_sets(train_xy, val_xy):
    for name, (X, Y) in (("train", train_xy), ("val", val_xy)):
        if len(X) == 0 or len(Y) == 0:
            raise DataError(f"{name} set is empty")
        if len(X) != len(Y):
            raise DataError(f"{name} inputs/targets differ in length")


def _sgd_update(params, grads, velocity, lr, momentum):
    # divergence surfaces as a non-finite val loss at the next eval
    with np.errstate(over="ignore", invalid="ignore"):
        for p, g, v in zip(params, grads, velocity):
            if momentum > 0.0:
                v *= momentum
                v += g
                p -= lr * v
            else:
                p -= lr * g


def _train_loop(net, train_xy, val_xy, cfg: TrainConfig, mode: str):
    _check_sets(train_xy, val_xy)
    X, Y = np.asarray(train_xy[0], float), np.asarray(train_xy[1], float)
    Xv, Yv = np.asarray(val_xy[0], float), np.asarray(val_xy[1], float)

    if mode == "adapters":
        params = [m for ad in net.adapters for m in (ad.A, ad.B)]
        snapshot = lambda: clone_adapters(net)
        frozen_before = base_checksum(net)
    else:
        params = [m for layer in net.layers for m in (layer.W, layer.b)]
        snapshot = lambda: clone_dense(net)
        frozen_before = None
    velocity = [np.zeros_like(p) for p in params]

    report = TrainReport()
    best = snapshot()

    def evaluate(step: int) -> bool:
        """Record one eval point; True when validation improved."""
        val_loss = mse_loss(net, Xv, Yv)
        train_loss = mse_loss(net, X, Y)
        if not np.isfinite(val_loss):
            raise TrainingError("validation loss diverged to non-finite", report=report)
        report.evals.append(EvalPoint(step=step, train_loss=train_loss, val_loss=val_loss))
        if val_loss < report.best_val_loss:
            report.best_val_loss = val_loss
            report.best_step = step
            return True
        return False

    if evaluate(0):
        best = snapshot()
    bad_evals = 0
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x747261696E]))
    step = 0
    stop = False
    for _ in range(cfg.max_epochs):
        order = rng.permutation(len(X))
        for start in range(0, len(X), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            _, base_grads, adapter_grads = backprop(net, X[idx], Y[idx])
            if mode == "adapters":
                grads = [m for g in adapter_grads for m in g]
            else:
                grads = [m for g in base_grads for m in g]
            _sgd_update(params, grads, velocity, cfg.learning_rate, cfg.momentum)
            step += 1
            if step % cfg.eval_every == 0:
                if evaluate(step):
                    best = snapshot()
                    bad_evals = 0
                else:
                    bad_evals += 1
                    if bad_evals >= cfg.patience:
                        report.stopped_early = True
                        stop = True
                        break
        if stop:
            break
    # the last steps deserve a look even when they fall between evals
    if not stop and step > 0 and step % cfg.eval_every != 0:
        if evaluate(step):
            best = snapshot()

    if mode == "adapters":
        for ad, chosen in zip(net.adapters, best):
            ad.A[...] = chosen.A
            ad.B[...] = chosen.B
        result = AdaptedNet(base=net.base, adapters=best)
        if base_checksum(net) != frozen_before:
            raise TrainingError("base weights changed during adapter training", report=report)
    else:
        for layer, chosen in zip(net.layers, best.layers):
            layer.W[...] = chosen.W
            layer.b[...] = chosen.b
        result = best
    return result, report


def train_sft(
    adapted: AdaptedNet, train_xy, val_xy, cfg: TrainConfig
) -> tuple[AdaptedNet, TrainReport]:
    """Fine-tune adapter matrices only; returns the best-validation snapshot."""
    if not isinstance(adapted, AdaptedNet):
        raise ConfigurationError("train_sft requires an AdaptedNet")
    return _train_loop(adapted, train_xy, val_xy, cfg, mode="adapters")


def train_dense(
    net: DenseNet, train_xy, val_xy, cfg: TrainConfig
) -> tuple[DenseNet, TrainReport]:
    """Train every parameter of a plain dense net (used for base pretraining)."""
    if isinstance(net, AdaptedNet):
        raise ConfigurationError("train_dense requires a plain DenseNet")
    return _train_loop(net, train_xy, val_xy, cfg, mode="dense")
