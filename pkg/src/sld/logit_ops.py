"""Logit post-processing: target swap, cascaded and conditional swaps, and the
ground-truth rescaling / label-smoothing comparison schemes.

Row functions take a 1-D logit row and an integer target; the ``*_batch``
variants take a ``(B, C)`` matrix and a target vector and are vectorized.
Argmax ties always resolve to the lowest index, and no swap happens when the
target already holds the maximum value.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .numeric import ShapeError, softmax_temp

SCALE_SCHEMES = ("ega", "egr", "ga", "ma")


@dataclass(frozen=True)
class ConditionalSwapRule:
    """Swap only when the softmax gap between the top prediction and the target
    is below (``less_than``) or above (``more_than``) ``alpha_threshold``."""

    alpha_threshold: float
    mode: str = "less_than"

    def __post_init__(self):
        if not 0.0 <= self.alpha_threshold <= 1.0:
            raise ValueError(f"alpha_threshold must lie in [0, 1], got {self.alpha_threshold}")
        if self.mode not in ("less_than", "more_than"):
            raise ValueError(f"mode must be 'less_than' or 'more_than', got {self.mode!r}")


@dataclass(frozen=True)
class SwapRule:
    depth: int = 1
    condition: Optional[ConditionalSwapRule] = None

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"swap depth must be >= 1, got {self.depth}")


@dataclass(frozen=True)
class SchemeParams:
    epsilon: float = 0.1
    w: float = 0.1
    n: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not self.w > 0:
            raise ValueError(f"w must be positive, got {self.w}")
        if not self.n > 1:
            raise ValueError(f"n must exceed 1, got {self.n}")


def _check_row(z, t) -> tuple[np.ndarray, int]:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise ShapeError(f"expected a logit row, got shape {z.shape}")
    t = int(t)
    if not 0 <= t < z.shape[0]:
        raise IndexError(f"target {t} out of range for {z.shape[0]} classes")
    return z, t


def _check_batch(z, targets) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ShapeError(f"expected a (B, C) logit batch, got shape {z.shape}")
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (z.shape[0],):
        raise ShapeError(f"expected {z.shape[0]} targets, got shape {targets.shape}")
    if np.any((targets < 0) | (targets >= z.shape[1])):
        raise IndexError(f"targets out of range for {z.shape[1]} classes")
    return z, targets


# --------------------------------------------------------------------------
# swaps
# --------------------------------------------------------------------------


def swap_index_batch(z, targets) -> np.ndarray:
    """Per-row column permutation that exchanges the target with the argmax.

    Rows whose target already holds the maximum get the identity permutation.
    """
    z, targets = _check_batch(z, targets)
    B, C = z.shape
    rows = np.arange(B)
    top = z.argmax(axis=1)
    fire = z[rows, targets] < z[rows, top]
    index = np.tile(np.arange(C), (B, 1))
    index[rows[fire], targets[fire]] = top[fire]
    index[rows[fire], top[fire]] = targets[fire]
    return index


def swap_to_target_batch(z, targets) -> np.ndarray:
    z, targets = _check_batch(z, targets)
    return np.take_along_axis(z, swap_index_batch(z, targets), axis=1)


def swap_to_target(z, t) -> np.ndarray:
    z, t = _check_row(z, t)
    return swap_to_target_batch(z[None, :], [t])[0]


def multi_swap_index_batch(z, targets, depth: int) -> np.ndarray:
    """Cascade from the ``depth``-th ranked non-target down to the top one.

    Ranks come from the original row; a step is skipped when the target value
    is already at least the value at that rank.
    """
    z, targets = _check_batch(z, targets)
    B, C = z.shape
    if not 1 <= depth <= C - 1:
        raise ValueError(f"swap depth must lie in [1, {C - 1}], got {depth}")
    rows = np.arange(B)
    masked = z.copy()
    masked[rows, targets] = -np.inf
    # stable sort on the negated values keeps lowest-index-first among ties
    ranked = np.argsort(-masked, axis=1, kind="stable")[:, : C - 1]
    index = np.tile(np.arange(C), (B, 1))
    for k in range(depth, 0, -1):
        pos = ranked[:, k - 1]
        cur_t = z[rows, index[rows, targets]]
        cur_pos = z[rows, index[rows, pos]]
        fire = cur_t < cur_pos
        r = rows[fire]
        a, b = index[r, targets[fire]].copy(), index[r, pos[fire]].copy()
        index[r, targets[fire]] = b
        index[r, pos[fire]] = a
    return index


def multi_swap(z, t, depth: int) -> np.ndarray:
    z, t = _check_row(z, t)
    idx = multi_swap_index_batch(z[None, :], [t], depth)[0]
    return z[idx]


def alpha_gap_batch(z, targets) -> np.ndarray:
    """``|max(softmax(z)) - softmax(z)[t]|`` per row, always at T=1."""
    z, targets = _check_batch(z, targets)
    p = softmax_temp(z, 1.0)
    return np.abs(p.max(axis=1) - p[np.arange(len(targets)), targets])


def condition_mask(z, targets, rule: ConditionalSwapRule) -> np.ndarray:
    alpha = alpha_gap_batch(z, targets)
    if rule.mode == "less_than":
        return alpha < rule.alpha_threshold
    return alpha > rule.alpha_threshold


def rule_index_batch(z, targets, rule: SwapRule) -> np.ndarray:
    """Column permutation implementing ``rule`` (depth plus optional condition)."""
    z, targets = _check_batch(z, targets)
    if rule.depth == 1:
        index = swap_index_batch(z, targets)
    else:
        index = multi_swap_index_batch(z, targets, rule.depth)
    if rule.condition is not None:
        keep = ~condition_mask(z, targets, rule.condition)
        index[keep] = np.arange(z.shape[1])
    return index


def conditional_swap(z, t, rule: ConditionalSwapRule) -> np.ndarray:
    z, t = _check_row(z, t)
    idx = rule_index_batch(z[None, :], [t], SwapRule(1, rule))[0]
    return z[idx]


def swap_rate(z, targets) -> float:
    """Fraction of rows whose (lowest-index) argmax differs from the target."""
    z, targets = _check_batch(z, targets)
    if len(targets) == 0:
        return 0.0
    return float(np.mean(z.argmax(axis=1) != targets))


# --------------------------------------------------------------------------
# comparison schemes
# --------------------------------------------------------------------------


def label_smoothing_target(t: int, params: SchemeParams, C: int) -> np.ndarray:
    """``1 - epsilon`` at the target and ``epsilon / C`` elsewhere.

    The row is deliberately not renormalized: it sums to
    ``(1 - epsilon) + epsilon * (C - 1) / C``.
    """
    if not 0 <= int(t) < C:
        raise IndexError(f"target {t} out of range for {C} classes")
    row = np.full(C, params.epsilon / C)
    row[int(t)] = 1.0 - params.epsilon
    return row


def label_smoothing_batch(targets, params: SchemeParams, C: int) -> np.ndarray:
    targets = np.asarray(targets, dtype=np.int64)
    out = np.full((len(targets), C), params.epsilon / C)
    out[np.arange(len(targets)), targets] = 1.0 - params.epsilon
    return out


def scale_ground_truth_batch(z, targets, scheme: str, params: SchemeParams) -> np.ndarray:
    z, targets = _check_batch(z, targets)
    rows = np.arange(len(targets))
    gt = z[rows, targets]
    if scheme == "ega":
        new = params.n * gt
    elif scheme == "egr":
        new = gt / params.n
    elif scheme == "ga":
        new = gt + gt * params.w
    elif scheme == "ma":
        mx = z.max(axis=1)
        new = mx + mx * params.w
    else:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCALE_SCHEMES}")
    out = z.copy()
    out[rows, targets] = new
    return out


def scale_ground_truth(z, t, scheme: str, params: SchemeParams) -> np.ndarray:
    z, t = _check_row(z, t)
    return scale_ground_truth_batch(z[None, :], [t], scheme, params)[0]
