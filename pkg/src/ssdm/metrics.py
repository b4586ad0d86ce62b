"""Confusion-matrix segmentation metrics and a connected-component fragmentation index."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ssdm.errors import ValidationError

_FOUR_CONN = ndimage.generate_binary_structure(2, 1)


@dataclass
class ConfusionMatrix:
    """Rows are ground truth, columns are predictions."""

    counts: np.ndarray

    @classmethod
    def zeros(cls, k: int) -> ConfusionMatrix:
        return cls(np.zeros((k, k), dtype=np.int64))

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def merge(self, other: ConfusionMatrix) -> ConfusionMatrix:
        if other.counts.shape != self.counts.shape:
            raise ValidationError("cannot merge confusion matrices of different class counts")
        return ConfusionMatrix(self.counts + other.counts)

    def __add__(self, other: ConfusionMatrix) -> ConfusionMatrix:
        return self.merge(other)


def confusion(gt: np.ndarray, pred: np.ndarray, k: int, ignore_index: int = 255) -> ConfusionMatrix:
    gt = np.asarray(gt).astype(np.int64).reshape(-1)
    pred = np.asarray(pred).astype(np.int64).reshape(-1)
    if gt.shape != pred.shape:
        raise ValidationError(f"gt and pred sizes differ: {gt.size} vs {pred.size}")
    keep = gt != ignore_index
    gt, pred = gt[keep], pred[keep]
    if np.any((gt < 0) | (gt >= k)) or np.any((pred < 0) | (pred >= k)):
        raise ValidationError(f"labels must lie in [0, {k}) or equal ignore_index={ignore_index}")
    return ConfusionMatrix(np.bincount(gt * k + pred, minlength=k * k).reshape(k, k).astype(np.int64))


@dataclass
class SegScores:
    oa: float
    miou: float
    macc: float
    iou: list[float | None]
    acc: list[float | None]
    evaluated_iou: list[int] = field(default_factory=list)
    evaluated_acc: list[int] = field(default_factory=list)


def compute_metrics(cm: ConfusionMatrix) -> SegScores:
    """OA, per-class IoU / accuracy and their means over the classes that occur.

    A class absent from both gt and prediction is left out of mIoU; a class
    absent from gt is left out of mAcc.
    """
    c = cm.counts.astype(np.float64)
    total = c.sum()
    if total <= 0:
        raise ValidationError("cannot compute metrics from an empty confusion matrix")
    tp = np.diag(c)
    gt_n = c.sum(axis=1)
    pred_n = c.sum(axis=0)
    union = gt_n + pred_n - tp
    iou_ok = union > 0
    acc_ok = gt_n > 0
    iou = np.where(iou_ok, tp / np.where(iou_ok, union, 1), np.nan)
    acc = np.where(acc_ok, tp / np.where(acc_ok, gt_n, 1), np.nan)
    return SegScores(
        oa=float(tp.sum() / total),
        miou=float(iou[iou_ok].mean()),
        macc=float(acc[acc_ok].mean()),
        iou=[None if np.isnan(v) else float(v) for v in iou],
        acc=[None if np.isnan(v) else float(v) for v in acc],
        evaluated_iou=[int(i) for i in np.flatnonzero(iou_ok)],
        evaluated_acc=[int(i) for i in np.flatnonzero(acc_ok)],
    )


def count_components(labels: np.ndarray, k: int | None = None) -> int:
    """4-connected components summed over classes."""
    labels = np.asarray(labels)
    classes = np.unique(labels) if k is None else range(k)
    return int(sum(ndimage.label(labels == c, structure=_FOUR_CONN)[1] for c in classes))


def fragmentation_index(gt: np.ndarray, pred: np.ndarray, k: int | None = None) -> float:
    """Components in the prediction divided by components in the ground truth."""
    n_gt = count_components(gt, k)
    if n_gt == 0:
        raise ValidationError("ground truth has no components")
    return count_components(pred, k) / n_gt
