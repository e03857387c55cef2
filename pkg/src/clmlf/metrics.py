"""Accuracy and F1 scores computed from a confusion matrix."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np


@dataclass
class Metrics:
    accuracy: float
    weighted_f1: float
    macro_f1: float
    precision: list
    recall: list
    f1: list
    support: list
    confusion: list  # rows = gold, columns = predicted

    def to_dict(self) -> dict:
        return asdict(self)


def confusion_matrix(preds, gold, num_classes: int) -> np.ndarray:
    preds = np.asarray(preds, dtype=np.int64)
    gold = np.asarray(gold, dtype=np.int64)
    if preds.shape != gold.shape:
        raise ValueError("preds and gold must have the same length")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (gold, preds), 1)
    return cm


def _ratio(num, den):
    return np.divide(num, den, out=np.zeros_like(num, dtype=np.float64), where=den > 0)


def metrics_from_confusion(cm: np.ndarray) -> Metrics:
    """Per-class scores count undefined ratios (no predictions / no support) as 0."""
    cm = np.asarray(cm, dtype=np.int64)
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    precision = _ratio(tp, predicted)
    recall = _ratio(tp, support)
    f1 = _ratio(2 * precision * recall, precision + recall)
    n = support.sum()
    return Metrics(
        accuracy=float(tp.sum() / n) if n else 0.0,
        weighted_f1=float((f1 * support).sum() / n) if n else 0.0,
        macro_f1=float(f1.mean()),
        precision=precision.tolist(),
        recall=recall.tolist(),
        f1=f1.tolist(),
        support=support.tolist(),
        confusion=cm.tolist(),
    )


def compute_metrics(preds, gold, num_classes: int) -> Metrics:
    return metrics_from_confusion(confusion_matrix(preds, gold, num_classes))
