"""Training protocol: Adam with cross-entropy, plateau LR decay, early stop.

The schedule monitors validation accuracy at the end of every epoch. An
improvement means strictly greater accuracy and resets both patience
counters. Twenty stagnant epochs halve the learning rate (and reset the
decay counter); fifty stagnant epochs stop training. The best-validation
weights are restored before returning.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Tuple

import numpy as np

from .data import batcher
from .errors import ConfigError, InputError, NumericError
from .layers import cross_entropy
from .network import Model
from .optim import adam_init, adam_step
from .tensor import Tensor


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 500
    early_stop_patience: int = 50
    lr_decay_patience: int = 20
    lr_decay_factor: float = 0.5
    initial_lr: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    runs: int = 1

    def validate(self) -> None:
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.early_stop_patience < 1 or self.lr_decay_patience < 1:
            raise ConfigError("patience values must be positive")
        if not 0.0 < self.lr_decay_factor < 1.0:
            raise ConfigError(f"lr_decay_factor must lie in (0,1), "
                              f"got {self.lr_decay_factor}")
        if self.initial_lr <= 0.0:
            raise ConfigError(f"initial_lr must be positive, got {self.initial_lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.runs < 1:
            raise ConfigError(f"runs must be >= 1, got {self.runs}")


@dataclass(frozen=True)
class EpochStats:
    """One trace row; ``lr`` is the rate after any end-of-epoch decay."""
    epoch: int
    train_loss: float
    train_accuracy: float
    val_accuracy: float
    lr: float


@dataclass
class RunRecord:
    run_index: int
    seed: int
    epochs: List[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    best_val_accuracy: float = 0.0
    stopped_epoch: int = 0
    wall_seconds: float = 0.0
    checkpoint: Optional[str] = None


@dataclass(frozen=True)
class RunSummary:
    mean_accuracy: float
    std_accuracy: float
    single_run: bool
    accuracies: tuple


@dataclass
class SplitData:
    """The immutable train/validation bundle fed to a session."""
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray

    def __post_init__(self) -> None:
        self.train_x = np.asarray(self.train_x, dtype=np.float64)
        self.train_y = np.asarray(self.train_y, dtype=np.int64)
        self.val_x = np.asarray(self.val_x, dtype=np.float64)
        self.val_y = np.asarray(self.val_y, dtype=np.int64)
        if self.train_x.shape[0] != self.train_y.shape[0]:
            raise InputError(f"{self.train_x.shape[0]} training features but "
                             f"{self.train_y.shape[0]} labels")
        if self.val_x.shape[0] != self.val_y.shape[0]:
            raise InputError(f"{self.val_x.shape[0]} validation features but "
                             f"{self.val_y.shape[0]} labels")
        if self.train_x.shape[0] == 0 or self.val_x.shape[0] == 0:
            raise InputError("both splits must be non-empty")


def evaluate_accuracy(model: Model, features: np.ndarray, labels: np.ndarray,
                      batch_size: int = 32) -> float:
    """Inference-mode accuracy over the whole set, in manifest order."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.shape[0] == 0:
        raise InputError("cannot evaluate on an empty set")
    hits = 0
    for start in range(0, features.shape[0], batch_size):
        chunk = features[start:start + batch_size]
        probs = model.forward(Tensor(chunk, requires_grad=False), training=False)
        hits += int(np.sum(np.argmax(probs.data, axis=1) == labels[start:start + chunk.shape[0]]))
    return hits / features.shape[0]


def train_one(model: Model, data: SplitData, cfg: TrainConfig,
              eval_fn: Optional[Callable[[Model], float]] = None,
              run_index: int = 0) -> RunRecord:
    """Run one training session; the model ends at its best-validation state.

    ``eval_fn`` defaults to validation accuracy; tests may substitute a stub
    to probe the schedule arithmetic in isolation.
    """
    cfg.validate()
    if data.train_x.shape[1:] != model.cfg.input_shape:
        raise InputError(f"training features {data.train_x.shape[1:]} do not match "
                         f"model input {model.cfg.input_shape}")
    if eval_fn is None:
        def eval_fn(m: Model) -> float:
            return evaluate_accuracy(m, data.val_x, data.val_y, cfg.batch_size)
    start_time = time.perf_counter()
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    params = model.trainable_arrays()
    state = adam_init(params)
    num_classes = model.cfg.num_classes
    lr = cfg.initial_lr
    best_acc = -np.inf
    best_snapshot = model.state_snapshot()
    record = RunRecord(run_index=run_index, seed=cfg.seed)
    stagnant_lr = 0
    stagnant_stop = 0
    for epoch in range(1, cfg.max_epochs + 1):
        shuffle_seed = int(rng.integers(0, 2 ** 63))
        loss_sum = 0.0
        hit_sum = 0
        seen = 0
        for batch_index, (bx, by) in enumerate(
                batcher(data.train_x, data.train_y, cfg.batch_size,
                        shuffle_seed, num_classes), start=1):
            for t in params.values():
                t.grad = None
            probs = model.forward(Tensor(bx, requires_grad=False),
                                  training=True, rng=rng)
            loss = cross_entropy(probs, Tensor(by, requires_grad=False))
            loss_value = float(loss.data)
            if not np.isfinite(loss_value):
                raise NumericError(f"non-finite loss at epoch {epoch}, "
                                   f"batch {batch_index}")
            loss.backward()
            # params outside the graph (SE weights in the plain residual
            # kind) get zero gradients and therefore never move
            grads = {name: t.grad if t.grad is not None else np.zeros_like(t.data)
                     for name, t in params.items()}
            adam_step(params, grads, state, lr)
            b = bx.shape[0]
            loss_sum += loss_value * b
            hit_sum += int(np.sum(np.argmax(probs.data, axis=1) == np.argmax(by, axis=1)))
            seen += b
        val_acc = float(eval_fn(model))
        if val_acc > best_acc:
            best_acc = val_acc
            best_snapshot = model.state_snapshot()
            record.best_epoch = epoch
            stagnant_lr = 0
            stagnant_stop = 0
        else:
            stagnant_lr += 1
            stagnant_stop += 1
        stop = stagnant_stop >= cfg.early_stop_patience
        if not stop and stagnant_lr >= cfg.lr_decay_patience:
            lr *= cfg.lr_decay_factor
            stagnant_lr = 0
        record.epochs.append(EpochStats(epoch, loss_sum / seen, hit_sum / seen,
                                        val_acc, lr))
        record.stopped_epoch = epoch
        if stop:
            break
    model.load_state(best_snapshot)
    record.best_val_accuracy = float(best_acc)
    record.wall_seconds = time.perf_counter() - start_time
    return record


def summarize_runs(accuracies) -> RunSummary:
    """Mean and sample standard deviation; a single run reports std 0."""
    acc = [float(a) for a in accuracies]
    if not acc:
        raise InputError("no runs to summarize")
    mean = float(np.mean(acc))
    if len(acc) == 1:
        return RunSummary(mean, 0.0, True, tuple(acc))
    return RunSummary(mean, float(np.std(acc, ddof=1)), False, tuple(acc))


def train_multi(build_fn: Callable[[int], Model], data: SplitData,
                cfg: TrainConfig,
                eval_fn: Optional[Callable[[Model], float]] = None,
                ) -> Tuple[List[RunRecord], RunSummary, List[Model]]:
    """Repeat training ``cfg.runs`` times with per-run seeds seed + index."""
    cfg.validate()
    records = []
    models = []
    for i in range(cfg.runs):
        run_cfg = replace(cfg, seed=cfg.seed + i, runs=1)
        model = build_fn(run_cfg.seed)
        records.append(train_one(model, data, run_cfg, eval_fn, run_index=i))
        models.append(model)
    summary = summarize_runs([r.best_val_accuracy for r in records])
    return records, summary, models


def record_lines(record: RunRecord) -> List[str]:
    """Line-delimited JSON: one row per epoch, then a closing summary object.

    Timing is deliberately omitted so identical seeds persist identical
    bytes.
    """
    lines = []
    for row in record.epochs:
        lines.append(json.dumps({
            "epoch": row.epoch,
            "train_loss": row.train_loss,
            "train_accuracy": row.train_accuracy,
            "val_accuracy": row.val_accuracy,
            "lr": row.lr,
        }, sort_keys=True))
    lines.append(json.dumps({
        "run_index": record.run_index,
        "seed": record.seed,
        "best_epoch": record.best_epoch,
        "best_val_accuracy": record.best_val_accuracy,
        "stopped_epoch": record.stopped_epoch,
        "checkpoint": record.checkpoint,
    }, sort_keys=True))
    return lines


def save_record(path, record: RunRecord) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(record_lines(record)) + "\n")
