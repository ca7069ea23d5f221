"""Confusion matrices and per-class IoU / mIoU over unified labels."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SchemaError, ShapeError
from .labelmap import IGNORE, UNIFIED_CLASSES


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Rows are ground truth, columns are predictions.

    ``missed`` counts points with a valid ground truth but an ignored (255)
    prediction; they are false negatives of their ground-truth class.
    """

    counts: np.ndarray
    missed: np.ndarray = field(default=None)

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ShapeError(f"confusion counts must be square, got {counts.shape}")
        if (counts < 0).any():
            raise SchemaError("confusion counts must be nonnegative")
        missed = np.zeros(len(counts), np.int64) if self.missed is None else np.asarray(self.missed, np.int64)
        if missed.shape != (len(counts),):
            raise ShapeError("missed must have one entry per class")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "missed", missed)

    @classmethod
    def zeros(cls, n_classes: int = len(UNIFIED_CLASSES)) -> "ConfusionMatrix":
        return cls(np.zeros((n_classes, n_classes), np.int64))

    @property
    def n_classes(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum() + self.missed.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.n_classes != self.n_classes:
            raise ShapeError("cannot merge confusion matrices of different sizes")
        return ConfusionMatrix(self.counts + other.counts, self.missed + other.missed)

    def __eq__(self, other) -> bool:
        return (isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)
                and np.array_equal(self.missed, other.missed))


def accumulate(cm: ConfusionMatrix, gt, pred) -> ConfusionMatrix:
    gt = np.asarray(gt).reshape(-1)
    pred = np.asarray(pred).reshape(-1)
    if gt.shape != pred.shape:
        raise ShapeError(f"gt has {gt.size} labels but pred has {pred.size}")
    c = cm.n_classes
    for name, arr in (("gt", gt), ("pred", pred)):
        bad = (arr < 0) | ((arr >= c) & (arr != IGNORE))
        if bad.any():
            raise SchemaError(f"{name} label {int(arr[bad][0])} outside [0, {c}) and not {IGNORE}")
    valid = gt != IGNORE
    g = gt[valid].astype(np.int64)
    p = pred[valid].astype(np.int64)
    hit = p != IGNORE
    counts = np.bincount(g[hit] * c + p[hit], minlength=c * c).reshape(c, c)
    missed = np.bincount(g[~hit], minlength=c)
    return ConfusionMatrix(cm.counts + counts, cm.missed + missed)


@dataclass(frozen=True, eq=False)
class IouResult:
    per_class: np.ndarray  # NaN where a class has zero union
    miou: float | None

    def as_percent(self) -> dict:
        return {
            "per_class": [None if np.isnan(v) else round(100.0 * float(v), 1) for v in self.per_class],
            "miou": None if self.miou is None else round(100.0 * self.miou, 1),
        }


def iou(cm: ConfusionMatrix, exclude_empty: bool = True) -> IouResult:
    """IoU_c = TP / (TP + FP + FN).

    With ``exclude_empty`` a class whose union is zero is left out of the mean;
    otherwise it counts as 0. An empty matrix has no mIoU.
    """
    tp = np.diag(cm.counts).astype(np.float64)
    fp = cm.counts.sum(axis=0) - tp
    fn = cm.counts.sum(axis=1) - tp + cm.missed
    union = tp + fp + fn
    with np.errstate(invalid="ignore", divide="ignore"):
        per = np.where(union > 0, tp / union, np.nan)
    if cm.total == 0:
        return IouResult(per, None)
    miou = float(np.nanmean(per)) if exclude_empty else float(np.nan_to_num(per).mean())
    return IouResult(per, miou)
