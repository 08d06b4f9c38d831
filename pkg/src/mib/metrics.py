"""Sentiment-style evaluation metrics: Acc7, Acc2, F1, MAE, Pearson correlation.

Binarization: a value is positive iff it is > 0; exactly 0 counts as negative.
Acc7 clamps to [-3, 3] and rounds half away from zero.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InputError


def _pair(preds, labels) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(preds, dtype=float).reshape(-1)
    y = np.asarray(labels, dtype=float).reshape(-1)
    if p.size == 0 or y.size == 0:
        raise InputError("metrics need at least one prediction/label pair")
    if p.shape != y.shape:
        raise InputError(f"{p.size} predictions vs {y.size} labels")
    return p, y


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def to_seven_classes(x) -> np.ndarray:
    return round_half_away(np.clip(np.asarray(x, dtype=float), -3.0, 3.0))


def acc7(preds, labels) -> float:
    p, y = _pair(preds, labels)
    return float(np.mean(to_seven_classes(p) == to_seven_classes(y)))


def _confusion(preds, labels) -> tuple[int, int, int, int]:
    p, y = _pair(preds, labels)
    pp, yp = p > 0, y > 0
    tp = int(np.sum(pp & yp))
    fp = int(np.sum(pp & ~yp))
    fn = int(np.sum(~pp & yp))
    tn = int(np.sum(~pp & ~yp))
    return tp, fp, fn, tn


def acc2(preds, labels) -> float:
    tp, fp, fn, tn = _confusion(preds, labels)
    return (tp + tn) / (tp + fp + fn + tn)


def f1(preds, labels) -> float:
    """F1 of the positive class; 0.0 when there are no positives at all."""
    tp, fp, fn, _ = _confusion(preds, labels)
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def weighted_accuracy(preds, labels) -> float:
    """(TP * N/P + TN) / (2N): accuracy balanced between the two classes."""
    tp, fp, fn, tn = _confusion(preds, labels)
    pos, neg = tp + fn, tn + fp
    if pos == 0 or neg == 0:
        raise InputError("weighted accuracy needs both classes among the labels")
    return (tp * neg / pos + tn) / (2 * neg)


def mae(preds, labels) -> float:
    p, y = _pair(preds, labels)
    return float(np.mean(np.abs(p - y)))


def pearson(preds, labels) -> float:
    p, y = _pair(preds, labels)
    # shifting by the first element first makes exactly representable shifts bit-invariant
    p, y = p - p[0], y - y[0]
    dp, dy = p - p.mean(), y - y.mean()
    sp, sy = np.sum(dp * dp), np.sum(dy * dy)
    if sp == 0.0 or sy == 0.0:
        raise InputError("Pearson correlation is undefined for a constant series")
    r = float(np.sum(dp * dy) / (np.sqrt(sp) * np.sqrt(sy)))
    return min(1.0, max(-1.0, r))


@dataclass
class MetricsReport:
    acc7: float
    acc2: float
    f1: float
    mae: float
    corr: float
    n: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        return cls(**{k: data[k] for k in ("acc7", "acc2", "f1", "mae", "corr", "n")})


def evaluate_predictions(preds, labels) -> MetricsReport:
    """All five metrics over the same pairs.

    A constant prediction series (e.g. an untrained model collapsing to one
    value) has no defined correlation; ``corr`` is reported as 0.0 then.
    """
    p, y = _pair(preds, labels)
    try:
        corr = pearson(p, y)
    except InputError:
        corr = 0.0
    return MetricsReport(acc7(p, y), acc2(p, y), f1(p, y), mae(p, y), corr, int(p.size))
