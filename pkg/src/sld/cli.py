"""Command-line entry point.

    sld train-teacher -c cfg.toml
    sld distill -c cfg.toml [--jobs N]
    sld ablate -c cfg.toml --preset components [--jobs N]
    sld analyze RUN_DIR

Exit codes: 0 success, 1 runtime failure, 2 config or usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .analysis import correlation_diff, gap_report, prediction_distribution, to_csv, topk_accuracy
from .config import DatasetConfig, RunConfig, dataset_config_from_dict, load_config
from .data import Dataset, DataFormatError, generate_confusable, load_csv, load_idx, train_val_split
from .logit_ops import ConditionalSwapRule, SwapRule
from .losses import DistillConfig
from .models import Checkpoint, FormatError, ModelSpec, load_checkpoint, save_checkpoint
from .trainer import ConfigError, RunReport, TrainingDiverged, distill, evaluate, train_teacher

log = logging.getLogger("sld")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
PRESETS = ("components", "schemes", "multiswap", "conditional")


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# shared plumbing
# --------------------------------------------------------------------------


_DATA_CACHE: dict[str, tuple[Dataset, Dataset]] = {}


def load_split(d: DatasetConfig) -> tuple[Dataset, Dataset]:
    key = json.dumps(dataclasses.asdict(d), sort_keys=True, default=list)
    if key not in _DATA_CACHE:
        if d.kind == "synthetic":
            full = generate_confusable(d.synthetic)
        elif d.kind == "idx":
            full = load_idx(d.images, d.labels, d.num_classes)
        else:
            full = load_csv(d.path, d.num_classes)
        _DATA_CACHE[key] = train_val_split(full, d.val_fraction, d.split_seed)
    return _DATA_CACHE[key]


def model_spec(net, ds: Dataset, where: str) -> ModelSpec:
    try:
        return ModelSpec(
            layer_sizes=net.layer_sizes,
            input_dim=ds.dim,
            num_classes=ds.num_classes,
            kind=net.kind,
            activation=net.activation,
            image_shape=ds.image_shape,
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_resolved(cfg: RunConfig, out: Path) -> None:
    write_json(out / "resolved_config.json", cfg.to_dict())


def save_run(out: Path, ckpt: Checkpoint, report: RunReport, ckpt_path: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, ckpt_path)
    report.write(out / "report.jsonl")
    write_json(out / "timing.json", {"wall_time_s": report.wall_time})


def load_teacher(cfg: RunConfig, train: Dataset) -> Checkpoint:
    path = Path(cfg.teacher_checkpoint)
    if not path.is_file():
        raise ConfigError(f"teacher.checkpoint: file not found: {path} (run train-teacher first)")
    ckpt = load_checkpoint(path)
    if ckpt.spec.num_classes != train.num_classes:
        raise ConfigError(
            f"teacher.checkpoint: teacher has {ckpt.spec.num_classes} classes, dataset has {train.num_classes}"
        )
    if ckpt.spec.input_dim != train.dim:
        raise ConfigError(f"teacher.checkpoint: teacher input_dim {ckpt.spec.input_dim} != dataset dim {train.dim}")
    return ckpt


def summarize(finals: dict) -> dict:
    """Mean and population std of the final metrics across seeds."""
    out = {"seeds": sorted(finals), "per_seed": {str(s): finals[s] for s in sorted(finals)}}
    for key in ("val_top1", "train_top1"):
        vals = [finals[s][key] for s in sorted(finals) if finals[s].get(key) is not None]
        if vals:
            out[f"mean_{key}"] = statistics.fmean(vals)
            out[f"std_{key}"] = statistics.pstdev(vals)
    return out


# --------------------------------------------------------------------------
# jobs (module level so worker processes can import them)
# --------------------------------------------------------------------------


def _distill_job(args) -> tuple[int, dict]:
    cfg, dcfg, seed, out = args
    train, val = load_split(cfg.dataset)
    teacher = load_teacher(cfg, train)
    spec = model_spec(cfg.student, train, "student")
    schedule = dataclasses.replace(cfg.schedule, seed=seed)
    ckpt, report = distill(teacher, spec, train, schedule, dcfg, val, aug=cfg.dataset.augment)
    save_run(Path(out), ckpt, report, Path(out) / "student.sldc")
    return seed, report.final


def _run_jobs(jobs: list, n_jobs: int) -> list:
    if n_jobs <= 1 or len(jobs) <= 1:
        return [_distill_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(_distill_job, jobs))


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_train_teacher(cfg: RunConfig) -> int:
    out = Path(cfg.output_dir)
    train, val = load_split(cfg.dataset)
    spec = model_spec(cfg.teacher, train, "teacher")
    write_resolved(cfg, out)
    ckpt, report = train_teacher(spec, train, cfg.teacher_schedule, val, aug=cfg.dataset.augment)
    save_run(out / "teacher", ckpt, report, Path(cfg.teacher_checkpoint))
    log.info("teacher: %s -> %s", report.final, cfg.teacher_checkpoint)
    return EXIT_OK


def _distill_cells(cfg: RunConfig, cells: dict[str, DistillConfig], root: Path, n_jobs: int) -> dict:
    train, _ = load_split(cfg.dataset)
    load_teacher(cfg, train)  # fail fast in the parent
    model_spec(cfg.student, train, "student")
    jobs, keys = [], []
    for name, dcfg in cells.items():
        for seed in cfg.seeds:
            jobs.append((cfg, dcfg, seed, str(root / name / f"seed_{seed}")))
            keys.append(name)
    results: dict[str, dict] = {name: {} for name in cells}
    for name, (seed, final) in zip(keys, _run_jobs(jobs, n_jobs)):
        results[name][seed] = final
    return {name: summarize(finals) for name, finals in results.items()}


def cmd_distill(cfg: RunConfig, n_jobs: int = 1) -> int:
    out = Path(cfg.output_dir)
    write_resolved(cfg, out)
    summary = _distill_cells(cfg, {"distill": cfg.distill}, out, n_jobs)["distill"]
    write_json(out / "distill" / "summary.json", summary)
    log.info("distill: mean val top-1 %s", summary.get("mean_val_top1"))
    return EXIT_OK


def preset_cells(preset: str, base: DistillConfig) -> dict[str, DistillConfig]:
    """Grid cells for a named ablation preset, derived from the configured loss stack."""
    r = dataclasses.replace
    if preset == "components":
        return {
            "kd_pa": r(base, scheme="none", use_ts=True, use_ss=False, use_pa=True),
            "ts": r(base, scheme="swap", use_ts=True, use_ss=False, use_pa=True),
            "ts_ss": r(base, scheme="swap", use_ts=True, use_ss=True, use_pa=True, gamma=0),
            "sld": r(base, scheme="swap", use_ts=True, use_ss=True, use_pa=True),
        }
    if preset == "schemes":
        cells = {"na": r(base, scheme="none", use_ss=False)}
        for scheme in ("lsr", "ega", "egr", "ga", "ma"):
            cells[scheme] = r(base, scheme=scheme, detach_pseudo_teacher=True)
        cells["sld"] = r(base, scheme="swap")
        return cells
    if preset == "multiswap":
        cells = {}
        for depth in (1, 2, 3):
            cells[f"ts_depth{depth}"] = r(base, scheme="swap", use_ss=False, swap_rule=SwapRule(depth))
            cells[f"sld_depth{depth}"] = r(base, scheme="swap", use_ss=True, swap_rule=SwapRule(depth))
        return cells
    if preset == "conditional":
        cells = {}
        for mode in ("less_than", "more_than"):
            for alpha in (0.0, 0.25, 0.5, 0.75, 1.0):
                rule = SwapRule(1, ConditionalSwapRule(alpha, mode))
                cells[f"{mode}_{alpha:g}"] = r(base, scheme="swap", swap_rule=rule)
        return cells
    raise UsageError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")


def cmd_ablate(cfg: RunConfig, preset: str, n_jobs: int = 1) -> int:
    cells = preset_cells(preset, cfg.distill)
    out = Path(cfg.output_dir)
    root = out / "ablate" / preset
    write_resolved(cfg, out)
    write_json(root / "cells.json", {name: dataclasses.asdict(c) for name, c in cells.items()})
    summaries = _distill_cells(cfg, cells, root, n_jobs)
    header = ["cell", "n_seeds", "mean_val_top1", "std_val_top1", "mean_train_top1"]
    header += [f"val_top1_seed_{s}" for s in cfg.seeds]
    rows = []
    for name, s in summaries.items():
        per = [s["per_seed"][str(seed)].get("val_top1") for seed in cfg.seeds]
        rows.append([name, len(cfg.seeds), s.get("mean_val_top1"), s.get("std_val_top1"), s.get("mean_train_top1")] + per)
    (root / "table.csv").write_text(to_csv(header, rows))
    write_json(root / "summary.json", summaries)
    log.info("ablate %s: %d cells written to %s", preset, len(cells), root)
    return EXIT_OK


def _student_runs(run_dir: Path) -> list[Path]:
    return sorted(run_dir.glob("**/student.sldc"))


def cmd_analyze(run_dir) -> int:
    run_dir = Path(run_dir)
    resolved = run_dir / "resolved_config.json"
    if not resolved.is_file():
        raise UsageError(f"{run_dir}: missing resolved_config.json")
    doc = json.loads(resolved.read_text())
    teacher_path = Path(doc["teacher_checkpoint"])
    if not teacher_path.is_file():
        raise UsageError(f"{run_dir}: teacher checkpoint not found at {teacher_path}")
    students = _student_runs(run_dir)
    if not students:
        raise UsageError(f"{run_dir}: no student checkpoints (student.sldc) found")

    _, val = load_split(dataset_config_from_dict(doc["dataset"]))
    teacher = load_checkpoint(teacher_path)
    z_tea = evaluate(teacher.model, val)
    tea_acc = topk_accuracy(z_tea, val.targets, 1)
    classes = tuple(doc.get("classes_of_interest", ())) or tuple(range(val.num_classes))
    C = val.num_classes

    corr_rows, gap_rows = [], []
    dist_rows = [["teacher", c] + prediction_distribution(z_tea, val.targets, classes).row(c).tolist() for c in classes]
    for path in students:
        name = path.parent.relative_to(run_dir).as_posix()
        z_stu = evaluate(load_checkpoint(path).model, val)
        cd = correlation_diff(z_stu, z_tea)
        stu_acc = topk_accuracy(z_stu, val.targets, 1)
        k = min(5, C)
        corr_rows.append([name, cd.max_abs, cd.mean_abs])
        gap_rows.append([name, tea_acc, stu_acc, gap_report(tea_acc, stu_acc), topk_accuracy(z_stu, val.targets, k)])
        pd = prediction_distribution(z_stu, val.targets, classes)
        dist_rows += [[name, c] + pd.row(c).tolist() for c in classes]

    out = run_dir / "analysis"
    out.mkdir(parents=True, exist_ok=True)
    (out / "correlation_diff.csv").write_text(to_csv(["run", "max_abs", "mean_abs"], corr_rows))
    (out / "gap.csv").write_text(
        to_csv(["run", "teacher_top1", "student_top1", "gap", f"student_top{min(5, C)}"], gap_rows)
    )
    (out / "prediction_distribution.csv").write_text(
        to_csv(["model", "true_class"] + [f"pred_{j}" for j in range(C)], dist_rows)
    )
    lines = [f"teacher val top-1: {tea_acc!r}", f"students analysed: {len(students)}"]
    lines += [f"{r[0]}: top-1 {r[2]!r} gap {r[3]!r} corr_diff mean {c[2]!r} max {c[1]!r}" for r, c in zip(gap_rows, corr_rows)]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    log.info("analysis written to %s", out)
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sld", description="Swap-corrected logit distillation experiments")
    p.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train-teacher", help="train the teacher network")
    t.add_argument("-c", "--config", required=True)

    d = sub.add_parser("distill", help="distill one student per seed")
    d.add_argument("-c", "--config", required=True)
    d.add_argument("--jobs", type=int, default=1)

    a = sub.add_parser("ablate", help="run an ablation grid")
    a.add_argument("-c", "--config", required=True)
    a.add_argument("--preset", required=True)
    a.add_argument("--jobs", type=int, default=1)

    z = sub.add_parser("analyze", help="write analysis tables for a run directory")
    z.add_argument("run_dir")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"sld: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if not args.verbose:
        logging.getLogger("sld.trainer").setLevel(logging.WARNING)
    try:
        if getattr(args, "jobs", 1) < 1:
            raise UsageError(f"--jobs must be >= 1, got {args.jobs}")
        if args.command == "analyze":
            return cmd_analyze(args.run_dir)
        if args.command == "ablate" and args.preset not in PRESETS:
            raise UsageError(f"unknown preset {args.preset!r}; choose from {', '.join(PRESETS)}")
        cfg = load_config(args.config)
        if args.command == "train-teacher":
            return cmd_train_teacher(cfg)
        if args.command == "distill":
            return cmd_distill(cfg, args.jobs)
        return cmd_ablate(cfg, args.preset, args.jobs)
    except (UsageError, ConfigError) as exc:
        print(f"sld: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, DataFormatError, TrainingDiverged, OSError, ValueError) as exc:
        print(f"sld: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
