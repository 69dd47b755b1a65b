"""Minibatch Adam training with per-epoch validation and best-checkpoint retention."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import models, taskgen
from .models import ModelSpec
from .numcore import AdamState, adam_step

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 20
    tasks_per_epoch: int = 1024
    batch_size: int = 16
    lr: float = 3e-4
    n_val: int = 256
    data_seed: int = 0
    val_seed: int = 1
    init_seed: int = 2
    # leading epochs that fit low-rank heads by their marginal likelihood
    marginal_warmup: int = 0

    def __post_init__(self):
        for name in ("epochs", "tasks_per_epoch", "batch_size", "n_val"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 <= self.marginal_warmup < self.epochs:
            raise ValueError("marginal_warmup must lie in [0, epochs)")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")

    @classmethod
    def seeded(cls, seed: int, **kw) -> "TrainConfig":
        """Seed triple derived from one integer."""
        return cls(data_seed=3 * seed, val_seed=3 * seed + 1, init_seed=3 * seed + 2, **kw)

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainRecord:
    train_loss: list[float] = field(default_factory=list)
    val_score: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_params: dict | None = None

    @property
    def best_score(self) -> float:
        return self.val_score[self.best_epoch]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_score"])
            for i, (tl, vs) in enumerate(zip(self.train_loss, self.val_score)):
                w.writerow([i + 1, repr(tl), repr(vs)])


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch, batch, loss):
        self.epoch, self.batch = epoch, batch
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")


def per_task_loglik(spec: ModelSpec, params, tasks, batch_size: int = 64) -> np.ndarray:
    """Normalized log-likelihood loglik / M of every task."""
    out = []
    for i in range(0, len(tasks), batch_size):
        chunk = tasks[i : i + batch_size]
        for pred, t in zip(models.forward_batch(spec, params, chunk), chunk):
            out.append(float(models.loglik(pred, t.target_y)) / t.n_target)
    return np.asarray(out)


def confidence_score(values) -> float:
    """Lower 95% bound on the mean: mean - 1.96 * std / sqrt(n), population std."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("empty validation set")
    return float(values.mean() - 1.96 * values.std() / np.sqrt(values.size))


def validation_score(spec: ModelSpec, params, val_tasks) -> float:
    return confidence_score(per_task_loglik(spec, params, val_tasks))


def epoch_seed(data_seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([data_seed, epoch]).generate_state(1)[0])


def train(spec: ModelSpec, task_cfg: taskgen.TaskConfig, cfg: TrainConfig, params=None, progress=None):
    """Train ``spec`` on fresh tasks each epoch; returns (best params, record).

    Validation tasks are generated once from ``cfg.val_seed``. Epoch ``e``
    draws its tasks from ``epoch_seed(cfg.data_seed, e)``. The first
    ``cfg.marginal_warmup`` epochs train on the marginal likelihood; validation
    always scores the joint likelihood.
    """
    if params is None:
        params = models.init(spec, cfg.init_seed)
    val_tasks = taskgen.generate_epoch(task_cfg, cfg.n_val, "INT", cfg.val_seed)
    state = AdamState.for_params(params, lr=cfg.lr)
    record = TrainRecord()
    best = -np.inf
    for epoch in range(cfg.epochs):
        tasks = taskgen.generate_epoch(task_cfg, cfg.tasks_per_epoch, "INT", epoch_seed(cfg.data_seed, epoch))
        joint = epoch >= cfg.marginal_warmup
        losses = []
        for b, start in enumerate(range(0, len(tasks), cfg.batch_size)):
            batch = tasks[start : start + cfg.batch_size]
            try:
                loss, grads = models.value_and_grad(spec, params, batch, joint)
            except FloatingPointError as err:
                raise TrainingDiverged(epoch + 1, b, str(err)) from err
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch + 1, b, loss)
            params = adam_step(params, grads, state)
            losses.append(loss)
        score = validation_score(spec, params, val_tasks)
        if not np.isfinite(score):
            raise TrainingDiverged(epoch + 1, -1, score)
        record.train_loss.append(float(np.mean(losses)))
        record.val_score.append(score)
        if score > best:
            best = score
            record.best_epoch = epoch
            record.best_params = {k: v.copy() for k, v in params.items()}
        log.info("epoch %d loss %.4f val %.4f", epoch + 1, record.train_loss[-1], score)
        if progress is not None:
            progress(epoch + 1, record)
    return record.best_params, record
