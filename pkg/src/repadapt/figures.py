"""Figure rendering for experiment reports.

The report path writes these next to ``metrics.tsv``: one loss-curve figure
per seed and one bar-chart summary of base/novel/HM across seeds. Feature
dumps are intentionally not plotted here; they exist for offline tools.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import MetricsReport  # noqa: E402
from .objective import LossBreakdown  # noqa: E402


def save_loss_curves(history: list[LossBreakdown], path: str | Path,
                     title: str = "training loss") -> Path:
    path = Path(path)
    steps = range(1, len(history) + 1)
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.plot(steps, [b.total for b in history], label="total", linewidth=1.5)
    ax.plot(steps, [b.ce_c for b in history], label="ce (class)", linewidth=1.0)
    ax.plot(steps, [b.ce_r for b in history], label="ce (representation)", linewidth=1.0)
    ax.plot(steps, [b.cos_v + b.cos_t for b in history], label="consistency", linewidth=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_metrics_summary(report: MetricsReport, path: str | Path) -> Path:
    path = Path(path)
    labels = [str(m.seed) for m in report.per_seed] + ["mean"]
    base = [m.base for m in report.per_seed] + [report.mean_base]
    novel = [m.novel for m in report.per_seed] + [report.mean_novel]
    hm = [m.hm for m in report.per_seed] + [report.mean_hm]
    x = range(len(labels))
    width = 0.27
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.bar([i - width for i in x], base, width, label="base")
    ax.bar(list(x), novel, width, label="novel")
    ax.bar([i + width for i in x], hm, width, label="HM")
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels)
    ax.set_xlabel("seed")
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 105)
    ax.set_title("base / novel accuracy")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
