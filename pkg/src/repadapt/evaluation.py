"""Base/novel evaluation with the harmonic-mean balance metric and
multi-seed aggregation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import objective as obj
from .errors import InputError
from .synthetic import SplitSpec, SyntheticTask
from .trainer import ModelState, image_features, text_classifier_features


def harmonic_mean(base: float, novel: float) -> float:
    """2 b n / (b + n), zero when the sum is zero."""
    if base + novel <= 0:
        return 0.0
    return 2.0 * base * novel / (base + novel)


@dataclass(frozen=True)
class SeedMetrics:
    seed: int
    base: float
    novel: float
    hm: float


@dataclass(frozen=True)
class MetricsReport:
    per_seed: tuple[SeedMetrics, ...]
    mean_base: float
    mean_novel: float
    mean_hm: float
    std_base: float
    std_novel: float
    std_hm: float

    @classmethod
    def from_runs(cls, runs: list[SeedMetrics]) -> "MetricsReport":
        """Aggregate per-seed rows; std is the population standard deviation."""
        if not runs:
            raise InputError("no completed runs to aggregate")
        base = np.array([r.base for r in runs], dtype=np.float64)
        novel = np.array([r.novel for r in runs], dtype=np.float64)
        hm = np.array([r.hm for r in runs], dtype=np.float64)
        return cls(tuple(runs), float(base.mean()), float(novel.mean()),
                   float(hm.mean()), float(base.std()), float(novel.std()),
                   float(hm.std()))


def _probabilities(state: ModelState, patches: np.ndarray,
                   classifiers: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray | None]:
    f_c, f_r = image_features(state, patches, live=False)
    p_c = obj.class_probabilities(f_c, classifiers, tau).data
    p_r = None
    if f_r is not None:
        p_r = obj.class_probabilities(f_r, classifiers, tau).data
    return p_c, p_r


def evaluate_split(state: ModelState, task: SyntheticTask, split: SplitSpec,
                   alpha: float, tau: float = 0.01,
                   mix_base: bool = True, mix_novel: bool = False) -> SeedMetrics:
    """Accuracy on both halves of the class set, as percentages.

    Base classes use mixed inference (class + representation probabilities)
    and novel classes class-only inference, unless the decoupling toggles
    say otherwise. Argmax ties break toward the lowest class index.
    """
    if not split.base or not split.novel:
        raise InputError("evaluation needs both split halves populated")
    unknown = [c for c in (*split.base, *split.novel) if not (0 <= c < task.classes)]
    if unknown:
        raise InputError(f"split names classes absent from the task: {unknown}")
    predictions = {}
    for tag, class_ids, mixed in (("base", split.base, mix_base),
                                  ("novel", split.novel, mix_novel)):
        prompts = [task.prompts[c] for c in class_ids]
        classifiers = text_classifier_features(state, prompts, live=False).data
        id_to_pos = {c: i for i, c in enumerate(class_ids)}
        keep = np.isin(task.eval_labels, class_ids)
        correct = total = 0
        for patches, label in zip(task.eval_images[keep], task.eval_labels[keep]):
            p_c, p_r = _probabilities(state, patches, classifiers, tau)
            if mixed and p_r is not None:
                probs = obj.infer_probabilities(p_c, p_r, "base", alpha)
            else:
                probs = obj.infer_probabilities(p_c, None, "novel", alpha)
            correct += int(int(probs.argmax()) == id_to_pos[int(label)])
            total += 1
        predictions[tag] = 100.0 * correct / total
    base, novel = predictions["base"], predictions["novel"]
    return SeedMetrics(seed=state.seed, base=base, novel=novel,
                       hm=harmonic_mean(base, novel))
