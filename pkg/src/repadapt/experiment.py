"""Experiment orchestration: multi-seed training, evaluation, and the
report artifacts written to disk (metrics.tsv, per-seed checkpoints,
figures, optional feature dumps)."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import figures
from .checkpoint import save_checkpoint
from .config import RunConfig
from .evaluation import MetricsReport, SeedMetrics, evaluate_split
from .errors import InputError
from .objective import LossBreakdown
from .synthetic import (SplitSpec, SyntheticTask, generate_synthetic_task,
                        split_classes)
from .trainer import (ModelState, build_model, image_features,
                      init_optimizer, reference_text_features, train_step)


@dataclass
class SeedRun:
    seed: int
    metrics: SeedMetrics
    history: list[LossBreakdown]
    checkpoint: Path | None


@dataclass
class ExperimentArtifacts:
    out_dir: Path
    report: MetricsReport
    runs: list[SeedRun]
    errors: dict[int, str] = field(default_factory=dict)
    metrics_tsv: Path | None = None
    figure_paths: list[Path] = field(default_factory=list)
    feature_dumps: list[Path] = field(default_factory=list)


def build_task(config: RunConfig) -> tuple[SyntheticTask, SplitSpec]:
    task = generate_synthetic_task(config.task_spec(), d_v=config.d_v,
                                   vocab=config.model_config().vocab,
                                   max_len=config.model_config().N)
    return task, split_classes(config.classes)


def base_training_set(task: SyntheticTask, split: SplitSpec
                      ) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
    """Training images/labels restricted to base classes, with labels
    remapped to positions in the base prompt list."""
    base_ids = list(split.base)
    remap = {c: i for i, c in enumerate(base_ids)}
    keep = np.isin(task.train_labels, base_ids)
    images = task.train_images[keep]
    labels = np.array([remap[int(y)] for y in task.train_labels[keep]], dtype=np.int64)
    prompts = [task.prompts[c] for c in base_ids]
    return images, labels, prompts


def train_one_seed(config: RunConfig, task: SyntheticTask, split: SplitSpec,
                   seed: int) -> tuple[ModelState, list[LossBreakdown]]:
    """Deterministic single-seed training on the base classes only."""
    state = build_model(config.model_config(), seed=seed)
    train_cfg = config.train_config(seed)
    opt = init_optimizer(state, train_cfg)
    images, labels, prompts = base_training_set(task, split)
    if len(images) < train_cfg.batch:
        raise InputError(f"batch {train_cfg.batch} exceeds base training set {len(images)}")
    frozen_text = reference_text_features(state, prompts)
    rng = np.random.default_rng(seed)
    history: list[LossBreakdown] = []
    for _ in range(train_cfg.steps):
        idx = rng.choice(len(images), size=train_cfg.batch, replace=False)
        history.append(train_step(state, opt, images[idx], labels[idx], prompts, frozen_text))
    return state, history


def evaluate_state(config: RunConfig, state: ModelState, task: SyntheticTask,
                   split: SplitSpec) -> SeedMetrics:
    return evaluate_split(state, task, split, alpha=config.alpha, tau=config.tau,
                          mix_base=config.mix_base, mix_novel=config.mix_novel)


def run_experiment(config: RunConfig, out_dir: str | Path,
                   dump_features: bool = False,
                   render_figures: bool = True) -> ExperimentArtifacts:
    """Train and evaluate every configured seed; write all artifacts.

    A failing seed is recorded and skipped; the aggregate covers the seeds
    that completed. At least one seed must complete.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    task, split = build_task(config)
    runs: list[SeedRun] = []
    errors: dict[int, str] = {}
    figure_paths: list[Path] = []
    dumps: list[Path] = []
    for seed in config.seeds:
        try:
            state, history = train_one_seed(config, task, split, seed)
            metrics = evaluate_state(config, state, task, split)
        except Exception as exc:  # per-seed isolation; aggregate what completed
            errors[seed] = f"{type(exc).__name__}: {exc}"
            continue
        ckpt = out / f"seed{seed}.ckpt"
        save_checkpoint(state, ckpt, config_echo={**config.echo(), "seed": seed})
        if render_figures:
            figure_paths.append(figures.save_loss_curves(
                history, out / f"loss_seed{seed}.png", title=f"training loss (seed {seed})"))
        if dump_features:
            dumps.append(write_feature_dump(state, task, split,
                                            out / f"features_seed{seed}.tsv"))
        runs.append(SeedRun(seed, metrics, history, ckpt))
    if not runs:
        detail = "; ".join(f"seed {s}: {msg}" for s, msg in errors.items())
        raise InputError(f"every seed failed ({detail})")
    report = MetricsReport.from_runs([r.metrics for r in runs])
    artifacts = ExperimentArtifacts(out, report, runs, errors)
    artifacts.metrics_tsv = write_metrics_tsv(report, out / "metrics.tsv")
    if render_figures:
        figure_paths.append(figures.save_metrics_summary(report, out / "metrics.png"))
    artifacts.figure_paths = figure_paths
    artifacts.feature_dumps = dumps
    return artifacts


def write_metrics_tsv(report: MetricsReport, path: str | Path) -> Path:
    """Tab-separated metrics: one row per seed, then mean and std rows."""
    path = Path(path)
    lines = ["seed\tbase\tnovel\thm"]
    for m in report.per_seed:
        lines.append(f"{m.seed}\t{m.base:.4f}\t{m.novel:.4f}\t{m.hm:.4f}")
    lines.append(f"mean\t{report.mean_base:.4f}\t{report.mean_novel:.4f}\t{report.mean_hm:.4f}")
    lines.append(f"std\t{report.std_base:.4f}\t{report.std_novel:.4f}\t{report.std_hm:.4f}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_feature_dump(state: ModelState, task: SyntheticTask, split: SplitSpec,
                       path: str | Path, feature: str = "class") -> Path:
    """One line per evaluation sample: label, split tag, then the d feature
    values, all tab-separated. ``feature`` picks the class or representation
    branch."""
    if feature not in ("class", "rep"):
        raise InputError(f"unknown feature kind {feature!r}")
    path = Path(path)
    base_set = set(split.base)
    lines = []
    for patches, label in zip(task.eval_images, task.eval_labels):
        f_c, f_r = image_features(state, patches, live=False)
        chosen = f_c if feature == "class" else f_r
        if chosen is None:
            raise InputError("representation features are unavailable for this model")
        tag = "base" if int(label) in base_set else "novel"
        values = "\t".join(f"{v:.7g}" for v in np.asarray(chosen.data).ravel())
        lines.append(f"{int(label)}\t{tag}\t{values}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
