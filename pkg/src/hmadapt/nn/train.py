"""Epoch loop with validation-AUC checkpoint selection."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from ..augment import AugmentConfig
from ..errors import DataError
from ..metrics import roc_auc
from ..patches import two_class_sampler
from .model import NetParams, loss_and_grads, predict_proba
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    epoch_size: int = 40000
    batch_size: int = 32
    lr: float = 5e-5
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 0 or self.epoch_size < 1 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0, epoch_size and batch_size >= 1")

    @property
    def steps_per_epoch(self) -> int:
        return math.ceil(self.epoch_size / self.batch_size)

    def adam(self) -> AdamState:
        return AdamState(lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps,
                         weight_decay=self.weight_decay)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    best: object
    best_epoch: int
    history: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    optimizer: AdamState | None = None

    @property
    def best_auc(self) -> float | None:
        return self.history[self.best_epoch - 1] if self.best_epoch > 0 else None


def run_epochs(*, epochs: int, steps_per_epoch: int, step: Callable[[], float],
               validate: Callable[[], float], snapshot: Callable[[], object],
               label: str = "train") -> TrainResult:
    """Generic loop: keep the snapshot with the highest validation score.

    With zero epochs the initial snapshot is returned.  Ties keep the earlier
    epoch.
    """
    result = TrainResult(best=snapshot(), best_epoch=0)
    best_score = -math.inf
    for epoch in range(1, epochs + 1):
        losses = [step() for _ in range(steps_per_epoch)]
        score = validate()
        result.history.append(score)
        result.losses.append(float(np.mean(losses)))
        log.info("%s epoch %d: loss %.4f val AUC %.4f", label, epoch, result.losses[-1], score)
        if score > best_score:
            best_score = score
            result.best = snapshot()
            result.best_epoch = epoch
    return result


def validation_scorer(predict: Callable[[np.ndarray], np.ndarray], val_ds, rng: np.random.Generator,
                      dtype=np.float32) -> Callable[[], float]:
    """Fix one set of validation patches and return a closure scoring AUC on it."""
    x, y = val_ds.extract_all(rng, dtype)
    return lambda: roc_auc(predict(x), y)


def train(net: NetParams, train_ds, val_ds, cfg: TrainConfig, aug: AugmentConfig | None,
          rng: np.random.Generator) -> TrainResult:
    """Train every parameter from the given initialisation.

    Batches come from the balanced two-class sampler with augmentation; the
    returned ``best`` is the epoch snapshot with the highest validation AUC.
    """
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise DataError("training needs nonempty train and validation data")
    net = net.copy()
    sample_rng, aug_rng, val_rng = rng.spawn(3)
    stream = two_class_sampler(train_ds.records, sample_rng)
    opt = cfg.adam()
    dtype = net.dtype

    def step():
        x, y = train_ds.sample_batch(stream, cfg.batch_size, aug, aug_rng, dtype)
        loss, grads = loss_and_grads(net, x, y, train=True)
        adam_step(net.params, grads, opt)
        return loss

    validate = validation_scorer(lambda x: predict_proba(net, x), val_ds, val_rng, dtype)
    result = run_epochs(epochs=cfg.epochs, steps_per_epoch=cfg.steps_per_epoch, step=step,
                        validate=validate, snapshot=net.copy, label="train")
    result.optimizer = opt
    return result
