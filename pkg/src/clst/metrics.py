"""Segmentation evaluation: confusion matrix, per-class IoU, mIoU.

Rows are ground truth, columns are predictions. Classes that never occur
in either role are excluded from the mean rather than counted as zero.
"""

from __future__ import annotations

import numpy as np


class ConfusionMatrix:
    def __init__(self, num_classes: int):
        if num_classes < 1:
            raise ValueError(f"num_classes must be >= 1, got {num_classes}")
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def accumulate(self, pred: np.ndarray, gt: np.ndarray) -> None:
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ValueError(f"accumulate: pred {pred.shape} vs gt {gt.shape}")
        p = pred.ravel().astype(np.int64)
        g = gt.ravel().astype(np.int64)
        c = self.num_classes
        if p.min(initial=0) < 0 or (p.size and p.max() >= c):
            raise ValueError(f"accumulate: prediction class out of range [0, {c})")
        if g.min(initial=0) < 0 or (g.size and g.max() >= c):
            raise ValueError(f"accumulate: ground-truth class out of range [0, {c})")
        self.counts += np.bincount(g * c + p, minlength=c * c).reshape(c, c)

    def merge(self, other: "ConfusionMatrix") -> None:
        self.counts += other.counts

    def total(self) -> int:
        return int(self.counts.sum())


def iou(cm: ConfusionMatrix) -> tuple[np.ndarray, float]:
    """Per-class IoU (NaN where the class never appears) and their mean.

    IoU_c = tp / (row_c + col_c - tp); zero-denominator classes are left out
    of the mean entirely.
    """
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    denom = counts.sum(axis=1) + counts.sum(axis=0) - tp
    per_class = np.full(cm.num_classes, np.nan)
    valid = denom > 0
    per_class[valid] = tp[valid] / denom[valid]
    mean = float(np.mean(per_class[valid])) if valid.any() else float("nan")
    return per_class, mean
