"""Classification metrics: confusion matrix, UAR, macro-F1 and fold aggregation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class MetricError(ValueError):
    pass


@dataclass
class Metrics:
    uar: float
    macro_f1: float
    confusion: np.ndarray = field(repr=False)
    n: int

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / self.n) if self.n else 0.0

    def primary(self, task_kind: str) -> float:
        """UAR for emotion tasks, macro-F1 for intent tasks."""
        return self.uar if task_kind == "emotion" else self.macro_f1

    def to_dict(self) -> dict:
        return {
            "uar": self.uar,
            "macro_f1": self.macro_f1,
            "accuracy": self.accuracy,
            "n": self.n,
            "confusion": self.confusion.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Metrics":
        return cls(
            uar=float(d["uar"]),
            macro_f1=float(d["macro_f1"]),
            confusion=np.asarray(d["confusion"], dtype=np.int64),
            n=int(d["n"]),
        )


def confusion_matrix(preds: Sequence[int], labels: Sequence[int], n_classes: int) -> np.ndarray:
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if preds.shape != labels.shape:
        raise MetricError(f"length mismatch: {len(preds)} predictions vs {len(labels)} labels")
    for name, arr in (("prediction", preds), ("label", labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise MetricError(f"{name} index out of range [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def _check_support(cm: np.ndarray) -> np.ndarray:
    support = cm.sum(axis=1)
    if not (support > 0).any():
        raise MetricError("confusion matrix has no true instances")
    return support


def uar(cm: np.ndarray) -> float:
    """Mean per-class recall over classes that have at least one true instance."""
    cm = np.asarray(cm)
    support = _check_support(cm)
    present = support > 0
    recall = np.diag(cm)[present] / support[present]
    return float(recall.mean())


def macro_f1(cm: np.ndarray) -> float:
    """Unweighted mean of per-class F1; a class with P + R = 0 scores 0."""
    cm = np.asarray(cm, dtype=np.float64)
    support = _check_support(cm)
    tp = np.diag(cm)
    predicted = cm.sum(axis=0)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, support, out=np.zeros_like(tp), where=support > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return float(f1.mean())


def compute_metrics(preds: Sequence[int], labels: Sequence[int], n_classes: int) -> Metrics:
    cm = confusion_matrix(preds, labels, n_classes)
    return Metrics(uar=uar(cm), macro_f1=macro_f1(cm), confusion=cm, n=int(cm.sum()))


def pool_folds(per_fold: Sequence[Metrics]) -> Metrics:
    """Sum confusion matrices across folds and recompute (pooled mode)."""
    if not per_fold:
        raise MetricError("no folds to pool")
    cm = sum(m.confusion for m in per_fold)
    return Metrics(uar=uar(cm), macro_f1=macro_f1(cm), confusion=cm, n=int(cm.sum()))


def aggregate_folds(per_fold: Sequence[Metrics]) -> dict[str, tuple[float, float]]:
    """Unweighted mean and population standard deviation of each metric across folds."""
    if not per_fold:
        raise MetricError("no folds to aggregate")
    out = {}
    for name in ("uar", "macro_f1", "accuracy"):
        values = np.array([getattr(m, name) for m in per_fold], dtype=np.float64)
        out[name] = (float(values.mean()), float(values.std()))
    return out
