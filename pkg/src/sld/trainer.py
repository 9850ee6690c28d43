"""Deterministic training loops for teacher pretraining and student distillation."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import tape as tp
from .analysis import topk_accuracy
from .data import Augment, Dataset, augment, batches
from .logit_ops import swap_rate
from .losses import DistillConfig, sld_objective
from .models import Checkpoint, Model, ModelSpec, forward, forward_graph, init_params
from .numeric import ShapeError

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainSchedule:
    epochs: int = 60
    batch_size: int = 64
    lr0: float = 0.05
    lr_decay_factor: float = 0.1
    decay_epochs: tuple[int, ...] = (30, 45)
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "decay_epochs", tuple(int(e) for e in self.decay_epochs))
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr0 > 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if any(b <= a for a, b in zip(self.decay_epochs, self.decay_epochs[1:])):
            raise ValueError(f"decay_epochs must be strictly increasing, got {self.decay_epochs}")


def lr_at(epoch: int, schedule: TrainSchedule) -> float:
    """Step schedule: one decay for every decay epoch already completed."""
    crossed = sum(1 for d in schedule.decay_epochs if d <= epoch - 1)
    return schedule.lr0 * schedule.lr_decay_factor**crossed


def sgd_step(params, grads, velocity, lr: float, momentum: float, weight_decay: float):
    """``v <- momentum * v + grad + weight_decay * p``; ``p <- p - lr * v``.

    Computed in float64 and stored back in each parameter's dtype. Returns new
    ``(params, velocity)`` lists; inputs are left untouched.
    """
    if not (len(params) == len(grads) == len(velocity)):
        raise ShapeError("params, grads and velocity must have the same length")
    new_p, new_v = [], []
    for p, g, v in zip(params, grads, velocity):
        if p.shape != np.shape(g) or p.shape != v.shape:
            raise ShapeError(f"shape mismatch: param {p.shape}, grad {np.shape(g)}, velocity {v.shape}")
        p64 = p.astype(np.float64)
        v64 = momentum * v.astype(np.float64) + g + weight_decay * p64
        new_p.append((p64 - lr * v64).astype(p.dtype))
        new_v.append(v64.astype(v.dtype))
    return new_p, new_v


@dataclass
class RunReport:
    epochs: list[dict] = field(default_factory=list)
    final: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def config_echo(self) -> str:
        return json.dumps(self.config, sort_keys=True, separators=(",", ":"))

    def lines(self) -> list[str]:
        out = [json.dumps({"type": "epoch", **rec}, sort_keys=True) for rec in self.epochs]
        # wall time is kept out of the file so reruns are byte-identical
        out.append(json.dumps({"type": "summary", "final": self.final, "config": self.config}, sort_keys=True))
        return out

    def write(self, path) -> None:
        Path(path).write_text("\n".join(self.lines()) + "\n")

    @classmethod
    def read(cls, path) -> "RunReport":
        report = cls()
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            kind = rec.pop("type")
            if kind == "epoch":
                report.epochs.append(rec)
            elif kind == "summary":
                report.final = rec["final"]
                report.config = rec["config"]
        return report


def evaluate(model: Model, dataset: Dataset, chunk: int = 2048) -> np.ndarray:
    """Logits for the whole dataset, computed in fixed-size chunks."""
    parts = [forward(model, dataset.features[i : i + chunk]) for i in range(0, len(dataset), chunk)]
    if not parts:
        return np.zeros((0, model.spec.num_classes))
    return np.concatenate(parts, axis=0)


def _accuracy(model: Model, dataset: Optional[Dataset]) -> Optional[float]:
    if dataset is None or len(dataset) == 0:
        return None
    return topk_accuracy(evaluate(model, dataset), dataset.targets, 1)


def _check_finite(value: float, epoch: int, step: int) -> None:
    if not math.isfinite(value):
        raise TrainingDiverged(f"non-finite loss {value} at epoch {epoch}, step {step}")


LossFn = Callable[[tp.Node, np.ndarray, np.ndarray, int], tuple[tp.Node, dict]]


def _fit(
    model: Model,
    train: Dataset,
    schedule: TrainSchedule,
    loss_fn: LossFn,
    val: Optional[Dataset],
    resume: Optional[Checkpoint],
    aug: Augment,
    on_epoch: Optional[Callable[[Checkpoint], None]],
    extra_metrics: Callable[[list[dict]], dict],
    config: dict,
) -> tuple[Checkpoint, RunReport]:
    t0 = time.perf_counter()
    if resume is not None:
        model = resume.model.copy()
        velocity = [v.copy() for v in resume.velocity] if resume.velocity is not None else None
        start = resume.epoch + 1
    else:
        velocity = None
        start = 1
    if velocity is None:
        velocity = [np.zeros_like(p) for p in model.params]
    report = RunReport(config=json.loads(json.dumps(config)))

    for epoch in range(start, schedule.epochs + 1):
        lr = lr_at(epoch, schedule)
        sums: dict[str, float] = {}
        seen = 0
        for step, batch in enumerate(batches(train, schedule.batch_size, schedule.seed, True, epoch)):
            x = augment(batch.features, train.image_shape, aug, schedule.seed, epoch, step)
            tape = tp.GradientTape()
            params = [tape.variable(p) for p in model.params]
            logits = forward_graph(model, tape, x, params)
            loss, stats = loss_fn(logits, x, batch, epoch)
            _check_finite(float(loss.value), epoch, step)
            grads = tp.backward(loss, tape)
            model.params, velocity = sgd_step(
                model.params, grads, velocity, lr, schedule.momentum, schedule.weight_decay
            )
            b = len(batch.targets)
            for k, v in stats.items():
                sums[k] = sums.get(k, 0.0) + v * b
            seen += b
        record = {"epoch": epoch, "lr": lr}
        record.update({k: v / seen for k, v in sums.items()})
        record["train_top1"] = _accuracy(model, train)
        record["val_top1"] = _accuracy(model, val)
        report.epochs.append(record)
        log.info("epoch %d lr=%.3g %s", epoch, lr, {k: round(v, 5) for k, v in record.items() if isinstance(v, float)})
        if on_epoch is not None:
            on_epoch(Checkpoint(model.copy(), schedule.seed, epoch, [v.copy() for v in velocity]))

    last_epoch = max(start - 1, schedule.epochs)
    ckpt = Checkpoint(model, schedule.seed, last_epoch, velocity)
    report.final = {
        "epochs": last_epoch,
        "train_top1": _accuracy(model, train),
        "val_top1": _accuracy(model, val),
    }
    report.final.update(extra_metrics(report.epochs))
    report.wall_time = time.perf_counter() - t0
    return ckpt, report


def _schedule_dict(schedule: TrainSchedule) -> dict:
    d = asdict(schedule)
    d["decay_epochs"] = list(d["decay_epochs"])
    return d


def train_teacher(
    model_spec: ModelSpec,
    train: Dataset,
    schedule: TrainSchedule,
    val: Optional[Dataset] = None,
    resume: Optional[Checkpoint] = None,
    aug: Augment = Augment(),
    on_epoch=None,
) -> tuple[Checkpoint, RunReport]:
    """Plain cross-entropy training from ``init_params(model_spec, schedule.seed)``."""
    if model_spec.num_classes != train.num_classes:
        raise ConfigError(f"model has {model_spec.num_classes} classes, dataset has {train.num_classes}")
    if model_spec.input_dim != train.dim:
        raise ConfigError(f"model input_dim {model_spec.input_dim} != dataset dim {train.dim}")
    model = init_params(model_spec, schedule.seed)

    def loss_fn(logits, x, batch, epoch):
        loss = tp.mean(tp.cross_entropy_rows(logits, batch.targets))
        return loss, {"l_ce": float(loss.value), "total": float(loss.value)}

    config = {"kind": "teacher", "model": model_spec.to_dict(), "schedule": _schedule_dict(schedule)}
    return _fit(model, train, schedule, loss_fn, val, resume, aug, on_epoch, lambda recs: {}, config)


def _teacher_logits_for(teacher: Model, train: Dataset, aug: Augment):
    if aug.enabled:
        return lambda x, idx: forward(teacher, x)
    cached = evaluate(teacher, train)
    return lambda x, idx: cached[idx]


def distill(
    teacher_ckpt: Checkpoint,
    student_spec: ModelSpec,
    train: Dataset,
    schedule: TrainSchedule,
    cfg: DistillConfig,
    val: Optional[Dataset] = None,
    resume: Optional[Checkpoint] = None,
    aug: Augment = Augment(),
    on_epoch=None,
) -> tuple[Checkpoint, RunReport]:
    """Train a student against a frozen teacher with the configured loss stack."""
    teacher = teacher_ckpt.model
    C = train.num_classes
    if teacher.spec.num_classes != C or student_spec.num_classes != C:
        raise ConfigError(
            f"class counts differ: teacher {teacher.spec.num_classes}, "
            f"student {student_spec.num_classes}, dataset {C}"
        )
    if teacher.spec.input_dim != train.dim or student_spec.input_dim != train.dim:
        raise ConfigError("teacher/student input_dim must match the dataset feature dimension")
    model = init_params(student_spec, schedule.seed)
    teacher_logits = _teacher_logits_for(teacher, train, aug)

    def loss_fn(logits, x, batch, epoch):
        z_tea = teacher_logits(x, batch.indices)
        total, br = sld_objective(logits, z_tea, batch.targets, epoch, cfg)
        stats = asdict(br)
        stats["swap_rate_teacher"] = swap_rate(z_tea, batch.targets)
        stats["swap_rate_student"] = swap_rate(logits.value, batch.targets)
        return total, stats

    def extra(records):
        out = {}
        if val is not None and len(val):
            out["teacher_val_top1"] = topk_accuracy(evaluate(teacher, val), val.targets, 1)
        if records:
            out["l_ss_total"] = float(sum(r["l_ss"] for r in records))
        return out

    config = {
        "kind": "distill",
        "teacher": teacher.spec.to_dict(),
        "student": student_spec.to_dict(),
        "schedule": _schedule_dict(schedule),
        "distill": cfg.to_dict(),
    }
    return _fit(model, train, schedule, loss_fn, val, resume, aug, on_epoch, extra, config)

