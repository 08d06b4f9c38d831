"""Seeded mini-batch training loop with per-epoch learning curves."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError, DivergenceError, InputError
from .metrics import MetricsReport, evaluate_predictions
from .model import MIBModel
from .networks import MODALITIES
from .objectives import VARIANT_LOSSES, LossBreakdown, MibConfig
from .optim import Adam
from .synth import Dataset
from .tensor import no_grad

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    mib: MibConfig = field(default_factory=MibConfig)

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ConfigurationError("lr must be > 0")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["mib"] = self.mib.to_dict()
        return out


@dataclass
class CurvePoint:
    """Epoch means of the training loss terms plus a test snapshot."""

    epoch: int
    task_loss: float
    kl_multimodal: float
    kl_unimodal: dict[str, float]
    test: MetricsReport

    def row(self) -> dict:
        out = {"epoch": self.epoch, "task_loss": self.task_loss,
               "kl_multimodal": self.kl_multimodal}
        for m in MODALITIES:
            out[f"kl_{m}"] = self.kl_unimodal.get(m, 0.0)
        out["test_mae"] = self.test.mae
        out["test_acc2"] = self.test.acc2
        return out


def _check_finite(b: LossBreakdown, epoch: int, step: int) -> None:
    terms = [("task_loss", b.task_loss), ("kl_multimodal", b.kl_multimodal)]
    terms += [(f"unimodal_task[{m}]", v) for m, v in b.unimodal_task_losses.items()]
    terms += [(f"kl_unimodal[{m}]", v) for m, v in b.kl_unimodal.items()]
    terms.append(("total", b.total))
    for name, value in terms:
        if not math.isfinite(value):
            raise DivergenceError(name, epoch, step)


def sentiment_scores(model: MIBModel, ds: Dataset) -> np.ndarray:
    """Model outputs on the label scale (binary: 2p - 1, so the sign is the class)."""
    with no_grad():
        out = model.predict(ds.bundle)
    task = model.config.task
    if task == "binary":
        return 2.0 * out - 1.0
    if task == "multiclass":
        raise ConfigurationError("sentiment metrics need a regression or binary task")
    return out


def evaluate(model: MIBModel, ds: Dataset) -> MetricsReport:
    return evaluate_predictions(sentiment_scores(model, ds), ds.labels)


def train(
    data: tuple[Dataset, Dataset],
    cfg: TrainConfig,
    variant_loss: Callable | None = None,
    on_epoch: Callable[[CurvePoint], None] | None = None,
) -> tuple[MIBModel, list[CurvePoint]]:
    """Train on ``data = (train, test)``; returns the model and one CurvePoint per epoch.

    Model init, batch order and reparameterization noise are all derived
    from ``cfg.seed``.
    """
    train_ds, test_ds = data
    if len(train_ds) == 0:
        raise InputError("training data is empty")
    mib = cfg.mib
    loss_fn = variant_loss or VARIANT_LOSSES[mib.variant]
    dims = {m: train_ds.bundle[m].shape[-1] for m in mib.modalities}
    model = MIBModel(mib, dims, seed=cfg.seed)
    shuffle_rng, noise_rng = (np.random.default_rng(s)
                              for s in np.random.SeedSequence(cfg.seed).spawn(2))
    opt = Adam(model.parameters(), lr=cfg.lr)
    targets = train_ds.targets(mib.task)
    n = len(train_ds)

    curves: list[CurvePoint] = []
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        sums = {"task": 0.0, "mm": 0.0}
        uni = {m: 0.0 for m in mib.modalities}
        steps = 0
        for step, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start: start + cfg.batch_size]
            batch = (train_ds.bundle.subset(idx), targets[idx])
            opt.zero_grad()
            b = loss_fn(batch, model, None, noise_rng)
            _check_finite(b, epoch, step)
            b.objective.backward()
            opt.step()
            sums["task"] += b.task_loss
            sums["mm"] += b.kl_multimodal
            for m, v in b.kl_unimodal.items():
                uni[m] += v
            steps += 1
        point = CurvePoint(
            epoch=epoch,
            task_loss=sums["task"] / steps,
            kl_multimodal=sums["mm"] / steps,
            kl_unimodal={m: v / steps for m, v in uni.items()},
            test=evaluate(model, test_ds),
        )
        curves.append(point)
        log.debug("epoch %d task=%.4f test_mae=%.4f", epoch, point.task_loss, point.test.mae)
        if on_epoch is not None:
            on_epoch(point)
    return model, curves
