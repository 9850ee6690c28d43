"""Distillation objectives built on the gradient tape.

The training path calls :func:`sld_objective`, which records the loss graph on
the caller's tape so gradients flow into model parameters. The array-level
helpers (:func:`teacher_swap_loss`, :func:`sld_loss`, ...) wrap it for
evaluation and testing.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import tape as tp
from .logit_ops import (
    SCALE_SCHEMES,
    SchemeParams,
    SwapRule,
    label_smoothing_batch,
    rule_index_batch,
    scale_ground_truth_batch,
)
from .numeric import ShapeError, softmax_temp

SCHEMES = ("swap", "none", "lsr") + SCALE_SCHEMES
SINGLE_TEMPERATURE = 4.0


@dataclass(frozen=True)
class TemperatureSet:
    temps: tuple[float, ...] = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0)

    def __post_init__(self):
        temps = tuple(float(t) for t in self.temps)
        object.__setattr__(self, "temps", temps)
        if not temps:
            raise ValueError("temperature set must not be empty")
        if any(not t > 0 for t in temps):
            raise ValueError(f"temperatures must be positive, got {temps}")
        if any(b <= a for a, b in zip(temps, temps[1:])):
            raise ValueError(f"temperatures must be strictly increasing, got {temps}")

    def __len__(self):
        return len(self.temps)

    def __iter__(self):
        return iter(self.temps)


@dataclass(frozen=True)
class DistillConfig:
    """Loss-stack configuration.

    ``scheme`` selects the logit processing applied to the teacher and to the
    pseudo-teacher: ``swap`` (default), ``none`` (plain KD targets), ``lsr``
    (pseudo-teacher replaced by a label-smoothing row), or one of the
    ground-truth rescalings ``ega``/``egr``/``ga``/``ma``.
    """

    temps: TemperatureSet = field(default_factory=TemperatureSet)
    gamma: int = 30
    use_ts: bool = True
    use_ss: bool = True
    use_pa: bool = True
    ce_weight: float = 1.0
    t_squared_scaling: bool = True
    swap_rule: SwapRule = field(default_factory=SwapRule)
    detach_pseudo_teacher: bool = True
    scheme: str = "swap"
    scheme_params: SchemeParams = field(default_factory=SchemeParams)

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.ce_weight < 0:
            raise ValueError(f"ce_weight must be >= 0, got {self.ce_weight}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if not self.detach_pseudo_teacher and self.scheme in SCALE_SCHEMES:
            raise ValueError(f"scheme {self.scheme!r} requires detach_pseudo_teacher = true")

    @property
    def active_temps(self) -> tuple[float, ...]:
        return self.temps.temps if self.use_pa else (SINGLE_TEMPERATURE,)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LossBreakdown:
    l_ts: float
    l_ss: float
    l_kd: float
    l_ce: float
    l_sld: float
    total: float


def prediction_augment(z, temps: TemperatureSet | Sequence[float]) -> list[np.ndarray]:
    temps = temps.temps if isinstance(temps, TemperatureSet) else tuple(temps)
    if not temps:
        raise ValueError("temperature set must not be empty")
    return [softmax_temp(z, T) for T in temps]


def schedule_gate(epoch: int, gamma: int) -> bool:
    """Pseudo-teacher loss is active strictly after epoch ``gamma`` (1-indexed)."""
    return epoch > gamma


# --------------------------------------------------------------------------
# reference distributions
# --------------------------------------------------------------------------


def _processed_logits(z: np.ndarray, targets: np.ndarray, cfg: DistillConfig) -> np.ndarray:
    if cfg.scheme == "swap":
        return np.take_along_axis(z, rule_index_batch(z, targets, cfg.swap_rule), axis=1)
    if cfg.scheme in SCALE_SCHEMES:
        return scale_ground_truth_batch(z, targets, cfg.scheme, cfg.scheme_params)
    return z


def teacher_reference_logits(z_tea, targets, cfg: DistillConfig) -> np.ndarray:
    """Teacher logits after the configured processing (LSR leaves the teacher alone)."""
    z_tea = np.asarray(z_tea, dtype=np.float64)
    return _processed_logits(z_tea, np.asarray(targets, dtype=np.int64), cfg)


def _kl_sum(ref_probs, stu: tp.Node, temps, scaled: bool) -> tp.Node:
    """``sum_k [T_k^2] * mean_i KL(ref_k || softmax(stu / T_k))``."""
    terms = []
    for k, T in enumerate(temps):
        p_stu = tp.softmax(stu, T)
        term = tp.mean(tp.kl_rows(ref_probs(k, T), p_stu))
        terms.append(tp.scale(term, T * T) if scaled else term)
    return tp.add_n(terms)


def _teacher_term(stu: tp.Node, z_tea: np.ndarray, targets, cfg: DistillConfig) -> tp.Node:
    ref = teacher_reference_logits(z_tea, targets, cfg)
    return _kl_sum(lambda k, T: softmax_temp(ref, T), stu, cfg.active_temps, cfg.t_squared_scaling)


def _student_term(stu: tp.Node, targets, cfg: DistillConfig) -> tp.Node:
    targets = np.asarray(targets, dtype=np.int64)
    temps = cfg.active_temps
    if cfg.scheme == "lsr":
        row = label_smoothing_batch(targets, cfg.scheme_params, stu.value.shape[1])
        return _kl_sum(lambda k, T: row, stu, temps, cfg.t_squared_scaling)
    if cfg.detach_pseudo_teacher:
        ref = _processed_logits(stu.value, targets, cfg)
        return _kl_sum(lambda k, T: softmax_temp(ref, T), stu, temps, cfg.t_squared_scaling)
    if cfg.scheme == "swap":
        index = rule_index_batch(stu.value, targets, cfg.swap_rule)
        ref_node = tp.permute_columns(stu, index)
    elif cfg.scheme == "none":
        ref_node = stu
    else:
        raise ValueError(f"non-detached pseudo-teacher is not supported for scheme {cfg.scheme!r}")
    return _kl_sum(lambda k, T: tp.softmax(ref_node, T), stu, temps, cfg.t_squared_scaling)


def _check_pair(z_tea, z_stu_value, targets):
    z_tea = np.asarray(z_tea, dtype=np.float64)
    if z_tea.shape != np.shape(z_stu_value):
        raise ShapeError(f"teacher/student logit shapes differ: {z_tea.shape} vs {np.shape(z_stu_value)}")
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (z_tea.shape[0],):
        raise ShapeError(f"expected {z_tea.shape[0]} targets, got shape {targets.shape}")
    return z_tea, targets


# --------------------------------------------------------------------------
# graph-level objective
# --------------------------------------------------------------------------


def sld_objective(
    stu: tp.Node, z_tea, targets, epoch: int, cfg: DistillConfig
) -> tuple[tp.Node, LossBreakdown]:
    """Record the full objective on ``stu``'s tape.

    Teacher logits enter as constants. When the pseudo-teacher term is gated
    off (or disabled) it is not recorded at all, so the graph is identical to
    a run without it.
    """
    z_tea, targets = _check_pair(z_tea, stu.value, targets)
    tape = stu.tape
    zero = tape.constant(np.float64(0.0))

    ce = tp.mean(tp.cross_entropy_rows(stu, targets))
    l_ts = _teacher_term(stu, z_tea, targets, cfg) if cfg.use_ts else zero
    ss_on = cfg.use_ss and schedule_gate(epoch, cfg.gamma)
    l_ss = _student_term(stu, targets, cfg) if ss_on else zero
    l_sld = tp.add(l_ts, l_ss) if ss_on else l_ts
    weighted_ce = tp.scale(ce, cfg.ce_weight)
    total = tp.add(weighted_ce, l_sld)

    l_kd = float(kd_loss(z_tea, stu.value, SINGLE_TEMPERATURE, cfg.t_squared_scaling))
    breakdown = LossBreakdown(
        l_ts=float(l_ts.value),
        l_ss=float(l_ss.value),
        l_kd=l_kd,
        l_ce=float(ce.value),
        l_sld=float(l_sld.value),
        total=float(total.value),
    )
    return total, breakdown


# --------------------------------------------------------------------------
# array-level wrappers
# --------------------------------------------------------------------------


def teacher_swap_loss(z_tea, z_stu, targets, cfg: DistillConfig) -> float:
    tape = tp.GradientTape()
    stu = tape.constant(np.asarray(z_stu, dtype=np.float64))
    z_tea, targets = _check_pair(z_tea, stu.value, targets)
    return float(_teacher_term(stu, z_tea, targets, cfg).value)


def student_swap_loss(z_stu, targets, cfg: DistillConfig) -> float:
    tape = tp.GradientTape()
    stu = tape.constant(np.asarray(z_stu, dtype=np.float64))
    if stu.value.ndim != 2:
        raise ShapeError(f"expected a (B, C) logit batch, got shape {stu.value.shape}")
    _check_pair(stu.value, stu.value, targets)
    return float(_student_term(stu, targets, cfg).value)


def sld_loss(z_tea, z_stu, targets, epoch: int, cfg: DistillConfig) -> LossBreakdown:
    tape = tp.GradientTape()
    _, breakdown = sld_objective(tape.variable(z_stu), z_tea, targets, epoch, cfg)
    return breakdown


def sld_loss_and_grad(
    z_tea, z_stu, targets, epoch: int, cfg: DistillConfig
) -> tuple[LossBreakdown, np.ndarray]:
    """Breakdown plus the gradient of ``total`` with respect to the student logits."""
    tape = tp.GradientTape()
    stu = tape.variable(z_stu)
    total, breakdown = sld_objective(stu, z_tea, targets, epoch, cfg)
    (grad,) = tp.backward(total, tape)
    return breakdown, grad


def kd_loss(z_tea, z_stu, T: float = SINGLE_TEMPERATURE, t_squared_scaling: bool = True) -> float:
    """Batch-mean ``KL(softmax(z_tea / T) || softmax(z_stu / T))``, times ``T^2`` if scaled."""
    if not T > 0:
        raise ValueError(f"temperature must be positive, got {T}")
    z_tea = np.asarray(z_tea, dtype=np.float64)
    z_stu = np.asarray(z_stu, dtype=np.float64)
    if z_tea.shape != z_stu.shape:
        raise ShapeError(f"teacher/student logit shapes differ: {z_tea.shape} vs {z_stu.shape}")
    tape = tp.GradientTape()
    stu = tape.constant(z_stu)
    term = tp.mean(tp.kl_rows(softmax_temp(z_tea, T), tp.softmax(stu, T)))
    value = float(term.value)
    return value * (T * T) if t_squared_scaling else value
