"""Adagrad, plateau scheduling, recording-level folds and the training loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .labels import Window
from .landmarks import AugmentParams, affine_points
from .nn import (ModelConfig, ModelParams, init_params, loss_and_grads, model_forward,
                 mse_loss, weighted_ce_loss)

log = logging.getLogger(__name__)

ADAGRAD_EPS = 1e-10


class EmptyDataset(ValueError):
    pass


class TooFewRecordings(ValueError):
    pass


@dataclass
class OptimizerState:
    lr: float = 0.01
    eps: float = ADAGRAD_EPS
    accum: dict[str, np.ndarray] = field(default_factory=dict)


def make_optimizer(name: str = "adagrad", lr: float = 0.01) -> OptimizerState:
    if name != "adagrad":
        raise ValueError(f"optimizer {name!r} is not available; only 'adagrad' is implemented")
    return OptimizerState(lr=lr)


def adagrad_step(state: OptimizerState, weights: dict[str, np.ndarray],
                 grads: dict[str, np.ndarray]) -> None:
    """In-place update: G += g**2; theta -= lr * g / (sqrt(G) + eps)."""
    for name, g in grads.items():
        acc = state.accum.get(name)
        if acc is None:
            acc = state.accum[name] = np.zeros_like(g)
        acc += g * g
        weights[name] -= state.lr * g / (np.sqrt(acc) + state.eps)


@dataclass
class SchedulerState:
    lr: float = 0.01
    factor: float = 0.5
    patience: int = 3
    best: float = math.inf
    num_bad_epochs: int = 0


def scheduler_step(state: SchedulerState, val_loss: float) -> SchedulerState:
    """Halve the rate once the no-improvement count exceeds ``patience``."""
    if not math.isfinite(val_loss):
        raise ValueError("validation loss must be finite")
    if val_loss < state.best:
        state.best = val_loss
        state.num_bad_epochs = 0
    else:
        state.num_bad_epochs += 1
        if state.num_bad_epochs > state.patience:
            state.lr *= state.factor
            state.num_bad_epochs = 0
    return state


@dataclass
class FoldPlan:
    folds: list[list[str]]

    @property
    def k(self) -> int:
        return len(self.folds)

    def split(self, i: int) -> tuple[list[str], list[str]]:
        """(train ids, validation ids) for fold ``i``."""
        val = list(self.folds[i])
        train = [r for j, f in enumerate(self.folds) if j != i for r in f]
        return train, val


def make_folds(recordings: Sequence[str], k: int = 5, seed: int = 0) -> FoldPlan:
    recordings = list(recordings)
    if len(recordings) < k:
        raise TooFewRecordings(f"{len(recordings)} recordings for {k} folds")
    order = np.random.default_rng(seed).permutation(len(recordings))
    groups = np.array_split(order, k)
    return FoldPlan([[recordings[i] for i in g] for g in groups])


@dataclass
class TrainConfig:
    lr: float = 0.01
    batch_size: int = 64
    epochs: int = 100
    loss: str = "mse"
    augment: bool = False
    seed: int = 0


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class TrainResult:
    params: ModelParams
    history: list[EpochRecord]
    best_epoch: int | None
    initial_train_loss: float
    train_ids: list[str]


def stack_windows(windows: Sequence[Window]) -> tuple[np.ndarray, np.ndarray]:
    """(b, 2, n, 21, 3) inputs and (b, n, 28) targets."""
    x = np.stack([w.landmarks for w in windows]).transpose(0, 2, 1, 3, 4)
    y = np.stack([w.labels for w in windows])
    return x, y


def evaluate_loss(params: ModelParams, windows: Sequence[Window], loss: str = "mse",
                  class_weights=None, batch_size: int = 64) -> float:
    """Eval-mode loss averaged over frames."""
    total, count = 0.0, 0
    for a in range(0, len(windows), batch_size):
        x, y = stack_windows(windows[a:a + batch_size])
        probs = model_forward(x, params, mode="eval")
        if loss == "mse":
            value = mse_loss(probs, y)
        else:
            value = weighted_ce_loss(probs, y, class_weights)
        total += value * len(x)
        count += len(x)
    return total / count


def _augment_batch(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    out = np.empty_like(x)
    for i in range(len(x)):
        params = AugmentParams.sample(rng, max_translation=0.0)
        pts = x[i].transpose(1, 0, 2, 3)  # (n, 2, 21, 3)
        present = np.abs(pts).sum(axis=(2, 3)) > 0
        out[i] = affine_points(pts, present, params).transpose(1, 0, 2, 3)
    return out


def train_model(train: Sequence[Window], val: Sequence[Window], config: ModelConfig,
                hyper: TrainConfig | None = None, class_weights=None,
                init: ModelParams | None = None) -> TrainResult:
    """Seeded Adagrad training; returns the parameters with the lowest validation loss."""
    hyper = hyper or TrainConfig()
    if not train or not val:
        raise EmptyDataset("training and validation sets must be non-empty")
    if hyper.loss == "ce" and class_weights is None:
        class_weights = np.ones(config.num_classes)
    rng = np.random.default_rng(hyper.seed)
    params = init.copy() if init is not None else init_params(config, rng)
    opt = make_optimizer("adagrad", hyper.lr)
    sched = SchedulerState(lr=hyper.lr)
    train_ids = sorted({w.recording_id for w in train})

    initial = evaluate_loss(params, train, hyper.loss, class_weights, hyper.batch_size)
    best_params, best_val, best_epoch = params.copy(), math.inf, None
    history: list[EpochRecord] = []
    for epoch in range(1, hyper.epochs + 1):
        opt.lr = sched.lr
        order = rng.permutation(len(train))
        losses, sizes = [], []
        for a in range(0, len(order), hyper.batch_size):
            batch = [train[i] for i in order[a:a + hyper.batch_size]]
            if len(batch) < 2:  # batchnorm needs two samples
                continue
            x, y = stack_windows(batch)
            if hyper.augment:
                x = _augment_batch(x, rng)
            loss, grads, _ = loss_and_grads(x, y, params, hyper.loss, class_weights, rng=rng)
            adagrad_step(opt, params.weights, grads)
            losses.append(loss)
            sizes.append(len(batch))
        train_loss = float(np.average(losses, weights=sizes)) if losses else math.nan
        val_loss = evaluate_loss(params, val, hyper.loss, class_weights, hyper.batch_size)
        history.append(EpochRecord(epoch, train_loss, val_loss, opt.lr))
        log.info("epoch %d train %.6f val %.6f lr %.5g", epoch, train_loss, val_loss, opt.lr)
        if val_loss < best_val:
            best_val, best_epoch, best_params = val_loss, epoch, params.copy()
        scheduler_step(sched, val_loss)
    return TrainResult(best_params, history, best_epoch, initial, train_ids)


def write_history_csv(path, history: Sequence[EpochRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for r in history:
            writer.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.lr)])
