"""Command-line interface.

Subcommands: ``train``, ``eval``, ``params``, ``gradcheck``,
``dump-features``. Every command prints a human-readable table to stdout;
the report paths additionally write ``metrics.tsv`` and figures into the
output directory.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .accounting import count_trainable_parameters
from .checkpoint import load_into, read_checkpoint
from .config import parse_config
from .errors import GradientCheckError, RepAdaptError
from .evaluation import MetricsReport
from .experiment import (build_task, evaluate_state, run_experiment,
                         write_feature_dump, write_metrics_tsv)
from .trainer import build_model, gradient_check


def _print_table(headers: list[str], rows: list[list[str]]) -> None:
    widths = [len(h) for h in headers]
    for row in rows:
        widths = [max(w, len(cell)) for w, cell in zip(widths, row)]
    line = "  ".join(h.ljust(w) for h, w in zip(headers, widths))
    print(line)
    print("  ".join("-" * w for w in widths))
    for row in rows:
        print("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))


def _print_report(report: MetricsReport) -> None:
    rows = [[str(m.seed), f"{m.base:.2f}", f"{m.novel:.2f}", f"{m.hm:.2f}"]
            for m in report.per_seed]
    rows.append(["mean", f"{report.mean_base:.2f}", f"{report.mean_novel:.2f}",
                 f"{report.mean_hm:.2f}"])
    rows.append(["std", f"{report.std_base:.2f}", f"{report.std_novel:.2f}",
                 f"{report.std_hm:.2f}"])
    _print_table(["seed", "base", "novel", "hm"], rows)


def cmd_train(args) -> int:
    config = parse_config(args.config)
    out_dir = Path(args.out) if args.out else Path("runs") / Path(args.config).stem
    artifacts = run_experiment(config, out_dir, dump_features=args.dump_features)
    _print_report(artifacts.report)
    for seed, message in sorted(artifacts.errors.items()):
        print(f"seed {seed} failed: {message}", file=sys.stderr)
    print(f"artifacts written to {artifacts.out_dir}")
    return 1 if artifacts.errors else 0


def cmd_eval(args) -> int:
    config = parse_config(args.config)
    manifest, _ = read_checkpoint(args.checkpoint)
    seed = int(manifest.get("config", {}).get("seed", config.seeds[0]))
    state = build_model(config.model_config(), seed=seed)
    load_into(state, args.checkpoint)
    task, split = build_task(config)
    metrics = evaluate_state(config, state, task, split)
    report = MetricsReport.from_runs([metrics])
    _print_report(report)
    out_dir = Path(args.out) if args.out else Path(args.checkpoint).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    path = write_metrics_tsv(report, out_dir / "metrics.tsv")
    print(f"metrics written to {path}")
    return 0


def cmd_params(args) -> int:
    config = parse_config(args.config)
    total, groups = count_trainable_parameters(
        config.model_config(), include_residual_biases=args.residual_biases)
    rows = [[name, str(count)] for name, count in groups.items()]
    rows.append(["total", str(total)])
    _print_table(["group", "trainable scalars"], rows)
    return 0


def cmd_gradcheck(args) -> int:
    config = parse_config(args.config)
    state = build_model(config.model_config(), seed=config.seeds[0])
    task, split = build_task(config)
    prompts = [task.prompts[c] for c in split.base]
    batch = min(2, len(task.train_images))
    images = task.train_images[:batch]
    labels = np.array([list(split.base).index(int(y)) if int(y) in split.base else 0
                       for y in task.train_labels[:batch]])
    try:
        report = gradient_check(state, images, labels, prompts,
                                config.train_config(config.seeds[0]).loss_weights(),
                                tolerance=args.tolerance)
    except GradientCheckError as exc:
        print(f"FAIL: {exc}", file=sys.stderr)
        return 1
    rows = [[name, f"{err:.3e}"] for name, err in sorted(report.per_parameter.items())]
    _print_table(["parameter", "max relative error"], rows)
    print(f"PASS: worst {report.worst_error:.3e} on {report.worst_parameter} "
          f"(tolerance {report.tolerance:.1e})")
    return 0


def cmd_dump_features(args) -> int:
    config = parse_config(args.config)
    seed = config.seeds[0]
    if args.checkpoint:
        manifest, _ = read_checkpoint(args.checkpoint)
        seed = int(manifest.get("config", {}).get("seed", seed))
    state = build_model(config.model_config(), seed=seed)
    if args.checkpoint:
        load_into(state, args.checkpoint)
    task, split = build_task(config)
    path = write_feature_dump(state, task, split, args.out, feature=args.feature)
    print(f"features written to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="repadapt",
        description="Representation-token adaptation on a frozen dual encoder")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train and evaluate every configured seed")
    p.add_argument("config")
    p.add_argument("--out", help="artifact directory (default: runs/<config-stem>)")
    p.add_argument("--dump-features", action="store_true",
                   help="also write per-seed feature dumps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate one checkpoint")
    p.add_argument("config")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="directory for metrics.tsv (default: checkpoint dir)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("params", help="closed-form trainable parameter counts")
    p.add_argument("config")
    p.add_argument("--residual-biases", action="store_true",
                   help="budget per-layer residual biases in the shared variant")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("gradcheck", help="verify gradients against finite differences")
    p.add_argument("config")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("dump-features", help="write per-sample features for offline tools")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", help="restore this checkpoint first")
    p.add_argument("--feature", choices=("class", "rep"), default="class")
    p.set_defaults(func=cmd_dump_features)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except RepAdaptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
