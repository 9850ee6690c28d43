"""Evaluation metrics: top-k accuracy, teacher/student gap, logit correlation
differences and per-class prediction distributions."""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numeric import ShapeError


@dataclass(frozen=True)
class CorrelationDiff:
    max_abs: float
    mean_abs: float


@dataclass(frozen=True)
class PredDistribution:
    classes: tuple[int, ...]
    counts: np.ndarray  # (len(classes), C); row r counts predictions for true class classes[r]

    def row(self, true_class: int) -> np.ndarray:
        return self.counts[self.classes.index(true_class)]


def _batch(logits, targets):
    z = np.asarray(logits, dtype=np.float64)
    t = np.asarray(targets, dtype=np.int64)
    if z.ndim != 2 or t.shape != (z.shape[0],):
        raise ShapeError(f"logits {z.shape} and targets {t.shape} do not align")
    return z, t


def topk_accuracy(logits, targets, k: int = 1) -> float:
    """Fraction of rows whose target ranks among the top ``k`` (ties go to the lower index)."""
    z, t = _batch(logits, targets)
    C = z.shape[1]
    if not 1 <= k <= C:
        raise ValueError(f"k must lie in [1, {C}], got {k}")
    if len(t) == 0:
        return 0.0
    zt = z[np.arange(len(t)), t][:, None]
    cols = np.arange(C)[None, :]
    ahead = (z > zt) | ((z == zt) & (cols < t[:, None]))
    return float(np.mean(ahead.sum(axis=1) < k))


def _class_correlation(z: np.ndarray) -> np.ndarray:
    centered = z - z.mean(axis=0, keepdims=True)
    std = np.sqrt((centered**2).sum(axis=0))
    dead = std == 0
    if np.any(dead):
        warnings.warn(
            f"zero-variance logit columns {np.flatnonzero(dead).tolist()}; their correlations are set to 0",
            RuntimeWarning,
            stacklevel=3,
        )
    safe = np.where(dead, 1.0, std)
    corr = (centered.T @ centered) / np.outer(safe, safe)
    corr[dead, :] = 0.0
    corr[:, dead] = 0.0
    return corr


def correlation_diff(stu_logits, tea_logits) -> CorrelationDiff:
    """Max and mean of ``|corr_stu - corr_tea|`` over off-diagonal class pairs.

    Each matrix is the Pearson correlation between class columns of the raw
    logits over all evaluated samples.
    """
    a = np.asarray(stu_logits, dtype=np.float64)
    b = np.asarray(tea_logits, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"logit shapes differ or are not 2-D: {a.shape} vs {b.shape}")
    diff = np.abs(_class_correlation(a) - _class_correlation(b))
    off = ~np.eye(a.shape[1], dtype=bool)
    return CorrelationDiff(float(diff[off].max()), float(diff[off].mean()))


def prediction_distribution(logits, targets, classes_of_interest: Sequence[int]) -> PredDistribution:
    z, t = _batch(logits, targets)
    C = z.shape[1]
    classes = tuple(int(c) for c in classes_of_interest)
    for c in classes:
        if not 0 <= c < C:
            raise ValueError(f"class {c} out of range for {C} classes")
    pred = z.argmax(axis=1)
    counts = np.zeros((len(classes), C), dtype=np.int64)
    for r, c in enumerate(classes):
        counts[r] = np.bincount(pred[t == c], minlength=C)
    return PredDistribution(classes, counts)


def gap_report(teacher_acc: float, student_acc: float) -> float:
    """Teacher minus student accuracy; negative when the student wins."""
    return float(teacher_acc) - float(student_acc)


# --------------------------------------------------------------------------
# table emission
# --------------------------------------------------------------------------


def to_csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v
