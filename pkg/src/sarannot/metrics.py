"""Segmentation metrics from a confusion matrix.

``n[i, j]`` counts pixels of true class i predicted as class j and
``t_i = sum_j n[i, j]``.  Undefined metrics (zero denominators) come back as
``None`` rather than raising.

False-alarm rate follows its verbal definition, misclassified over correctly
classified pixels, ``(sum_ij n_ij - sum_i n_ii) / sum_i n_ii``.  The
frequently quoted form ``sum_ij n_ij / sum_i n_ii`` (total over correct) is
always >= 1 and does not match that definition.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

METRIC_KEYS = ("pa", "ma", "miu", "fwiu", "far", "qr", "precision", "recall", "tp", "fp", "fn", "tn")


@dataclass
class ConfusionMatrix:
    n: np.ndarray

    def __post_init__(self):
        self.n = np.asarray(self.n, dtype=np.int64)
        if self.n.ndim != 2 or self.n.shape[0] != self.n.shape[1]:
            raise ValueError("confusion matrix must be square")
        if np.any(self.n < 0):
            raise ValueError("confusion counts must be non-negative")

    @property
    def n_classes(self) -> int:
        return self.n.shape[0]

    @property
    def t(self) -> np.ndarray:
        """Per-class reference totals t_i."""
        return self.n.sum(axis=1)

    @property
    def total(self) -> int:
        return int(self.n.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.n + other.n)

    @classmethod
    def from_binary_counts(cls, tp: int, fp: int, fn: int, tn: int) -> "ConfusionMatrix":
        """Class 0 = non-building, class 1 = building (positive)."""
        return cls(np.array([[tn, fp], [fn, tp]]))

    def binary_counts(self, positive: int = 1) -> dict:
        n = self.n
        tp = int(n[positive, positive])
        fp = int(n[:, positive].sum() - tp)
        fn = int(n[positive, :].sum() - tp)
        tn = self.total - tp - fp - fn
        return {"tp": tp, "fp": fp, "fn": fn, "tn": tn}


def confusion(pred: np.ndarray, ref: np.ndarray, n_classes: int = 2) -> ConfusionMatrix:
    pred = np.asarray(pred)
    ref = np.asarray(ref)
    if pred.shape != ref.shape:
        raise ValueError(f"prediction {pred.shape} and reference {ref.shape} differ in shape")
    p = pred.astype(np.int64).ravel()
    r = ref.astype(np.int64).ravel()
    for arr, what in ((p, "prediction"), (r, "reference")):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ValueError(f"{what} labels must lie in [0, {n_classes})")
    counts = np.bincount(r * n_classes + p, minlength=n_classes * n_classes)
    return ConfusionMatrix(counts.reshape(n_classes, n_classes))


def precision_recall(tp: int, fp: int, fn: int) -> tuple[Optional[float], Optional[float]]:
    """Precision and recall in percent; None where the denominator is zero."""
    precision = 100.0 * tp / (tp + fp) if tp + fp > 0 else None
    recall = 100.0 * tp / (tp + fn) if tp + fn > 0 else None
    return precision, recall


def class_iou(cm: ConfusionMatrix) -> np.ndarray:
    """Per-class IU in percent; NaN for classes absent from both maps."""
    n = cm.n.astype(np.float64)
    diag = np.diag(n)
    union = n.sum(axis=1) + n.sum(axis=0) - diag
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(union > 0, 100.0 * diag / union, np.nan)


def segmentation_metrics(cm: ConfusionMatrix) -> dict:
    """PA, MA, MIU, FWIU, FAR, QR in percent.

    Classes with t_i = 0 are left out of the MA and MIU averages (the
    divisor counts only present classes).
    """
    if cm.total <= 0:
        raise ValueError("confusion matrix is empty")
    n = cm.n.astype(np.float64)
    t = n.sum(axis=1)
    diag = np.diag(n)
    correct = diag.sum()
    total = n.sum()
    present = t > 0
    union = t + n.sum(axis=0) - diag
    iu = diag[present] / union[present]
    return {
        "pa": 100.0 * correct / total,
        "ma": 100.0 * float(np.mean(diag[present] / t[present])),
        "miu": 100.0 * float(np.mean(iu)),
        "fwiu": 100.0 * float(np.sum(t[present] * iu) / total),
        "far": 100.0 * (total - correct) / correct if correct > 0 else None,
        # sum_i (t_i + sum_j n_ji - n_ii) = 2 * total - correct
        "qr": 100.0 * correct / (2.0 * total - correct),
    }


def full_report(cm: ConfusionMatrix, positive: int = 1) -> dict:
    """Every metric plus the binary counts of the ``positive`` class."""
    report = segmentation_metrics(cm)
    counts = cm.binary_counts(positive)
    report["precision"], report["recall"] = precision_recall(counts["tp"], counts["fp"], counts["fn"])
    report.update(counts)
    return {k: report[k] for k in METRIC_KEYS}


def per_image_mean(cms: list[ConfusionMatrix], positive: int = 1) -> dict:
    """Average of per-image metrics; undefined values are skipped."""
    reports = [full_report(cm, positive) for cm in cms]
    out = {}
    for k in METRIC_KEYS:
        vals = [r[k] for r in reports if r[k] is not None]
        if k in ("tp", "fp", "fn", "tn"):
            out[k] = int(sum(vals))
        else:
            out[k] = float(np.mean(vals)) if vals else None
    return out


def format_report(report: dict) -> str:
    lines = []
    for k in METRIC_KEYS:
        v = report.get(k)
        if v is None:
            lines.append(f"{k} = undefined")
        elif isinstance(v, int):
            lines.append(f"{k} = {v}")
        else:
            lines.append(f"{k} = {v:.4f}")
    return "\n".join(lines) + "\n"
