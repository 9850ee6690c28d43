"""TOML run configuration.

Schema (all tables optional unless noted; unknown keys are errors)::

    output_dir = "runs/demo"          # required
    seeds = [1, 2, 3, 4]              # required, non-empty

    [dataset]
    kind = "synthetic"                # synthetic | idx | csv
    val_fraction = 0.2
    split_seed = 0
    images = "train-images.idx"       # idx only
    labels = "train-labels.idx"       # idx only
    path = "data.csv"                 # csv only
    num_classes = 10                  # idx/csv, optional
    [dataset.synthetic]               # SynthSpec fields
    [dataset.augment]                 # flip, jitter

    [teacher]                         # ModelSpec fields minus input_dim/num_classes
    layer_sizes = [512, 256, 10]
    checkpoint = "teacher/teacher.sldc"
    [teacher.schedule]                # TrainSchedule fields

    [student]                         # ModelSpec fields minus input_dim/num_classes
    [schedule]                        # TrainSchedule for students; seed comes from `seeds`

    [distill]                         # DistillConfig scalars plus temps and swap_depth
    [distill.condition]               # alpha_threshold, mode
    [distill.scheme_params]           # epsilon, w, n

    [analysis]
    classes_of_interest = [0, 1, 2, 3]

Relative paths resolve against the config file's directory. ``SLD_SEED_OFFSET``
is added to every training seed (teacher and student runs); data generation and
the train/validation split are left unchanged.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import tomli

from .data import Augment, SynthSpec
from .logit_ops import ConditionalSwapRule, SchemeParams, SwapRule
from .losses import DistillConfig, TemperatureSet
from .trainer import ConfigError, TrainSchedule

SEED_OFFSET_ENV = "SLD_SEED_OFFSET"
DATASET_KINDS = ("synthetic", "idx", "csv")


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "synthetic"
    val_fraction: float = 0.2
    split_seed: int = 0
    images: Optional[str] = None
    labels: Optional[str] = None
    path: Optional[str] = None
    num_classes: Optional[int] = None
    synthetic: SynthSpec = field(default_factory=SynthSpec)
    augment: Augment = field(default_factory=Augment)


@dataclass(frozen=True)
class NetConfig:
    layer_sizes: tuple[int, ...]
    kind: str = "mlp"
    activation: str = "relu"

    def __post_init__(self):
        if not isinstance(self.layer_sizes, (list, tuple)) or not all(isinstance(w, int) for w in self.layer_sizes):
            raise ValueError(f"layer_sizes must be a list of integers, got {self.layer_sizes!r}")
        object.__setattr__(self, "layer_sizes", tuple(self.layer_sizes))


@dataclass(frozen=True)
class RunConfig:
    output_dir: str
    seeds: tuple[int, ...]
    dataset: DatasetConfig
    teacher: NetConfig
    teacher_schedule: TrainSchedule
    teacher_checkpoint: str
    student: NetConfig
    schedule: TrainSchedule
    distill: DistillConfig
    classes_of_interest: tuple[int, ...] = ()
    seed_offset: int = 0

    def to_dict(self) -> dict:
        """Fully defaulted configuration, JSON-ready."""
        return _plain(dataclasses.asdict(self))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


# --------------------------------------------------------------------------
# table -> dataclass with field-level errors
# --------------------------------------------------------------------------


def _check_keys(table: dict, allowed, where: str) -> None:
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}; allowed: {', '.join(sorted(allowed))}")


def _check_type(value, default, where: str):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, tuple):
        ok = isinstance(value, list)
        value = tuple(tuple(v) if isinstance(v, list) else v for v in value) if ok else value
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{where}: expected {type(default).__name__}, got {type(value).__name__} {value!r}")
    return float(value) if isinstance(default, float) else value


def _build(cls, table: dict, where: str, **fixed):
    """Instantiate dataclass ``cls`` from a TOML table, type-checking against defaults."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    _check_keys(table, [n for n in fields if n not in fixed], where)
    kwargs = dict(fixed)
    for key, value in table.items():
        default = fields[key].default
        if default is dataclasses.MISSING or default is None:
            kwargs[key] = value
        else:
            kwargs[key] = _check_type(value, default, f"{where}.{key}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _table(doc: dict, key: str, where: str) -> dict:
    value = doc.get(key, {})
    if not isinstance(value, dict):
        raise ConfigError(f"{where}{key}: expected a table")
    return value


# --------------------------------------------------------------------------
# sections
# --------------------------------------------------------------------------


def _resolve(base: Path, p: Optional[str]) -> Optional[str]:
    if p is None:
        return None
    return str((base / p).resolve()) if not Path(p).is_absolute() else p


def _dataset(table: dict, base: Path) -> DatasetConfig:
    table = dict(table)
    synth = _build(SynthSpec, table.pop("synthetic", {}), "dataset.synthetic")
    aug = _build(Augment, table.pop("augment", {}), "dataset.augment")
    _check_keys(table, [f.name for f in dataclasses.fields(DatasetConfig)], "dataset")
    for key in ("images", "labels", "path"):
        if key in table and not isinstance(table[key], str):
            raise ConfigError(f"dataset.{key}: expected a path string")
    kind = table.get("kind", "synthetic")
    if kind not in DATASET_KINDS:
        raise ConfigError(f"dataset.kind: must be one of {', '.join(DATASET_KINDS)}, got {kind!r}")
    val_fraction = table.get("val_fraction", 0.2)
    if not isinstance(val_fraction, (int, float)) or not 0.0 < val_fraction < 1.0:
        raise ConfigError(f"dataset.val_fraction: must lie in (0, 1), got {val_fraction!r}")
    split_seed = _check_type(table.get("split_seed", 0), 0, "dataset.split_seed")
    num_classes = table.get("num_classes")
    if num_classes is not None:
        num_classes = _check_type(num_classes, 0, "dataset.num_classes")
    needed = {"synthetic": (), "idx": ("images", "labels"), "csv": ("path",)}[kind]
    paths = {}
    for key in needed:
        if key not in table:
            raise ConfigError(f"dataset.{key}: required for kind = {kind!r}")
        resolved = _resolve(base, table[key])
        if not Path(resolved).is_file():
            raise ConfigError(f"dataset.{key}: file not found: {resolved}")
        paths[key] = resolved
    return DatasetConfig(
        kind=kind,
        val_fraction=float(val_fraction),
        split_seed=split_seed,
        num_classes=num_classes,
        synthetic=synth,
        augment=aug,
        **paths,
    )


def _net(table: dict, where: str) -> NetConfig:
    if "layer_sizes" not in table:
        raise ConfigError(f"{where}.layer_sizes: required")
    return _build(NetConfig, table, where)


def _distill(table: dict) -> DistillConfig:
    table = dict(table)
    cond_t = table.pop("condition", None)
    params = _build(SchemeParams, table.pop("scheme_params", {}), "distill.scheme_params")
    condition = None
    if cond_t is not None:
        if "alpha_threshold" not in cond_t:
            raise ConfigError("distill.condition.alpha_threshold: required")
        condition = _build(ConditionalSwapRule, cond_t, "distill.condition")
    depth = table.pop("swap_depth", 1)
    depth = _check_type(depth, 1, "distill.swap_depth")
    temps = table.pop("temps", None)
    try:
        rule = SwapRule(depth=depth, condition=condition)
        temp_set = TemperatureSet(tuple(temps)) if temps is not None else TemperatureSet()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"distill: {exc}") from None
    return _build(
        DistillConfig, table, "distill", temps=temp_set, swap_rule=rule, scheme_params=params
    )


TOP_LEVEL = ("output_dir", "seeds", "dataset", "teacher", "student", "schedule", "distill", "analysis")


def parse_config(doc: dict, base_dir=".", env=None) -> RunConfig:
    env = os.environ if env is None else env
    base = Path(base_dir)
    _check_keys(doc, TOP_LEVEL, "config")
    if "output_dir" not in doc or not isinstance(doc["output_dir"], str):
        raise ConfigError("output_dir: required path string")
    seeds = doc.get("seeds")
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
        raise ConfigError(f"seeds: required non-empty list of integers, got {seeds!r}")
    if len(set(seeds)) != len(seeds):
        raise ConfigError(f"seeds: duplicates in {seeds}")
    try:
        offset = int(env.get(SEED_OFFSET_ENV, "0"))
    except ValueError:
        raise ConfigError(f"{SEED_OFFSET_ENV}: not an integer: {env.get(SEED_OFFSET_ENV)!r}") from None

    output_dir = _resolve(base, doc["output_dir"])
    teacher_t = dict(_table(doc, "teacher", ""))
    teacher_sched = _build(TrainSchedule, teacher_t.pop("schedule", {}), "teacher.schedule")
    ckpt = teacher_t.pop("checkpoint", None)
    if ckpt is not None and not isinstance(ckpt, str):
        raise ConfigError("teacher.checkpoint: expected a path string")
    ckpt = _resolve(base, ckpt) if ckpt else str(Path(output_dir) / "teacher" / "teacher.sldc")
    teacher = _net(teacher_t, "teacher")
    student = _net(_table(doc, "student", ""), "student")
    schedule = _build(TrainSchedule, _table(doc, "schedule", ""), "schedule")

    analysis = _table(doc, "analysis", "")
    _check_keys(analysis, ["classes_of_interest"], "analysis")
    classes = analysis.get("classes_of_interest", [])
    if not isinstance(classes, list) or not all(isinstance(c, int) for c in classes):
        raise ConfigError("analysis.classes_of_interest: expected a list of integers")

    return RunConfig(
        output_dir=output_dir,
        seeds=tuple(s + offset for s in seeds),
        dataset=_dataset(_table(doc, "dataset", ""), base),
        teacher=teacher,
        teacher_schedule=dataclasses.replace(teacher_sched, seed=teacher_sched.seed + offset),
        teacher_checkpoint=ckpt,
        student=student,
        schedule=schedule,
        distill=_distill(_table(doc, "distill", "")),
        classes_of_interest=tuple(classes),
        seed_offset=offset,
    )


def load_config(path, env=None) -> RunConfig:
    path = Path(path)
    try:
        doc = tomli.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from None
    return parse_config(doc, path.parent, env)


def dataset_config_from_dict(d: dict) -> DatasetConfig:
    """Inverse of the ``dataset`` block in :meth:`RunConfig.to_dict`."""
    d = dict(d)
    synth = dict(d.pop("synthetic"))
    synth["superclass_pairs"] = tuple(tuple(p) for p in synth["superclass_pairs"])
    aug = Augment(**d.pop("augment"))
    return DatasetConfig(**d, synthetic=SynthSpec(**synth), augment=aug)


def with_distill(cfg: RunConfig, **changes: Any) -> RunConfig:
    return dataclasses.replace(cfg, distill=dataclasses.replace(cfg.distill, **changes))
