"""Dense numeric kernel: temperature softmax, KL divergence, cross-entropy.

Every function accepts a single row (shape ``(C,)``) or a batch (shape
``(B, C)``) and works along the last axis in float64.
"""

from __future__ import annotations

import numpy as np

PROB_FLOOR = 1e-12


class ShapeError(ValueError):
    pass


def _as_logits(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim not in (1, 2):
        raise ShapeError(f"expected a logit row or batch, got ndim={z.ndim}")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits contain non-finite values")
    return z


def _check_temperature(T: float) -> float:
    T = float(T)
    if not T > 0 or not np.isfinite(T):
        raise ValueError(f"temperature must be a positive finite number, got {T}")
    return T


def softmax_temp(z, T: float = 1.0) -> np.ndarray:
    """``exp(z_j / T) / sum_c exp(z_c / T)`` along the last axis."""
    T = _check_temperature(T)
    z = _as_logits(z)
    s = z / T
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_temp(z, T: float = 1.0) -> np.ndarray:
    T = _check_temperature(T)
    z = _as_logits(z)
    s = z / T
    s = s - s.max(axis=-1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def kl_divergence(p_ref, p_model):
    """``sum_j p_ref_j * log(p_ref_j / p_model_j)`` along the last axis.

    Terms with ``p_ref_j == 0`` contribute nothing. Both arguments are floored
    at ``PROB_FLOOR`` inside the log, so identical rows give exactly 0. Returns a float for a single row and an
    array of per-row values for a batch.
    """
    p = np.asarray(p_ref, dtype=np.float64)
    q = np.asarray(p_model, dtype=np.float64)
    if p.shape != q.shape:
        raise ShapeError(f"shape mismatch: {p.shape} vs {q.shape}")
    pos = p > 0
    log_ratio = np.log(np.maximum(p, PROB_FLOOR)) - np.log(np.maximum(q, PROB_FLOOR))
    terms = np.where(pos, p * log_ratio, 0.0)
    out = terms.sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def cross_entropy(z, t):
    """``-log softmax(z)[t]``; ``t`` is an int for a row or an index array for a batch."""
    logp = log_softmax_temp(z, 1.0)
    C = logp.shape[-1]
    if logp.ndim == 1:
        t = int(t)
        if not 0 <= t < C:
            raise IndexError(f"target {t} out of range for {C} classes")
        return float(-logp[t])
    t = np.asarray(t, dtype=np.int64)
    if t.shape != (logp.shape[0],):
        raise ShapeError(f"expected {logp.shape[0]} targets, got shape {t.shape}")
    if np.any((t < 0) | (t >= C)):
        raise IndexError(f"targets out of range for {C} classes")
    return -logp[np.arange(len(t)), t]


def one_hot(t, C: int) -> np.ndarray:
    t = np.asarray(t, dtype=np.int64)
    out = np.zeros(t.shape + (C,), dtype=np.float64)
    np.put_along_axis(out, t[..., None], 1.0, axis=-1)
    return out
