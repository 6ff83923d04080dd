"""Confusion matrix and mean intersection-over-union."""
from __future__ import annotations

from typing import Iterable, Optional

import numpy as np


class ConfusionMatrix:
    """``K x K`` counts; rows are ground truth, columns are predictions."""

    def __init__(self, num_classes: int):
        self.num_classes = int(num_classes)
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def update(self, pred: np.ndarray, truth: np.ndarray, ignore_index: Optional[int] = None) -> "ConfusionMatrix":
        pred = np.asarray(pred).reshape(-1).astype(np.int64)
        truth = np.asarray(truth).reshape(-1).astype(np.int64)
        if pred.shape != truth.shape:
            raise ValueError(f"prediction size {pred.size} != ground-truth size {truth.size}")
        keep = np.ones(truth.shape, dtype=bool) if ignore_index is None else truth != ignore_index
        pred, truth = pred[keep], truth[keep]
        K = self.num_classes
        if truth.size and (truth.min() < 0 or truth.max() >= K or pred.min() < 0 or pred.max() >= K):
            raise ValueError(f"class ids must lie in 0..{K - 1}")
        self.counts += np.bincount(truth * K + pred, minlength=K * K).reshape(K, K)
        return self

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def iou(self) -> np.ndarray:
        """Per-class IoU; NaN for classes absent from both truth and prediction."""
        tp = np.diag(self.counts).astype(np.float64)
        union = self.counts.sum(axis=0) + self.counts.sum(axis=1) - tp
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(union > 0, tp / np.where(union > 0, union, 1), np.nan)


def miou(cm: ConfusionMatrix, ignore: Iterable[int] = ()) -> float:
    """Mean IoU over classes not in ``ignore`` that occur in truth or prediction."""
    ignore = set(int(i) for i in ignore)
    keep = [k for k in range(cm.num_classes) if k not in ignore]
    if not keep:
        raise ValueError("miou: every class is ignored")
    ious = cm.iou()[keep]
    present = ious[~np.isnan(ious)]
    if present.size == 0:
        raise ValueError("miou: no scored class appears in truth or prediction")
    return float(present.mean())
