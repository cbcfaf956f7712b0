"""Synthetic classification tasks standing in for real image/text datasets.

Each class owns a Gaussian patch-feature mean; images are that mean plus
unit noise per patch. Text prompts share one filler template with a single
class-identifying token inside. Everything is deterministic per seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders import BOS_ID, EOS_ID, FIRST_FREE_ID
from .errors import ConfigError, InputError


@dataclass(frozen=True)
class SyntheticTaskSpec:
    classes: int = 8
    shots: int = 16
    grid: int = 4              # patch grid; M = grid * grid
    separation: float = 3.0
    template_len: int = 3      # filler tokens around the class token
    seed: int = 0
    eval_shots: int = 16

    def __post_init__(self):
        if self.classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.classes}")
        if self.shots < 1 or self.eval_shots < 1:
            raise ConfigError("shots and eval_shots must be >= 1")
        if self.grid < 1:
            raise ConfigError(f"grid must be >= 1, got {self.grid}")

    @property
    def M(self) -> int:
        return self.grid * self.grid


@dataclass(frozen=True)
class SplitSpec:
    base: tuple[int, ...]
    novel: tuple[int, ...]

    def __post_init__(self):
        base, novel = set(self.base), set(self.novel)
        if not base or not novel:
            raise InputError("both split halves must be nonempty")
        if base & novel:
            raise InputError(f"split halves overlap: {sorted(base & novel)}")


def split_classes(classes: int) -> SplitSpec:
    """Sorted class ids, first half base, second half novel."""
    ids = list(range(classes))
    half = classes // 2
    return SplitSpec(tuple(ids[:half]), tuple(ids[half:]))


@dataclass
class SyntheticTask:
    spec: SyntheticTaskSpec
    class_means: np.ndarray      # (C, d_v)
    train_images: np.ndarray     # (C * shots, M, d_v)
    train_labels: np.ndarray
    eval_images: np.ndarray      # (C * eval_shots, M, d_v)
    eval_labels: np.ndarray
    prompts: list[np.ndarray]    # one token-id sequence per class

    @property
    def classes(self) -> int:
        return self.spec.classes


def class_token_id(label: int) -> int:
    return FIRST_FREE_ID + label


def generate_synthetic_task(spec: SyntheticTaskSpec, d_v: int, vocab: int,
                            max_len: int) -> SyntheticTask:
    """Build the labeled image/text dataset for one task spec."""
    if FIRST_FREE_ID + spec.classes + spec.template_len > vocab:
        raise ConfigError(
            f"{spec.classes} classes plus {spec.template_len} template tokens "
            f"exceed vocabulary capacity {vocab}")
    prompt_len = 2 + spec.template_len + 1
    if prompt_len > max_len:
        raise ConfigError(f"prompt length {prompt_len} exceeds capacity {max_len}")
    rng = np.random.default_rng(spec.seed)
    means = rng.normal(0.0, spec.separation, size=(spec.classes, d_v)).astype(np.float32)

    def sample_images(count):
        images = np.empty((spec.classes * count, spec.M, d_v), dtype=np.float32)
        labels = np.empty(spec.classes * count, dtype=np.int64)
        row = 0
        for c in range(spec.classes):
            noise = rng.normal(0.0, 1.0, size=(count, spec.M, d_v))
            images[row:row + count] = means[c] + noise
            labels[row:row + count] = c
            row += count
        return images, labels

    train_images, train_labels = sample_images(spec.shots)
    eval_images, eval_labels = sample_images(spec.eval_shots)

    filler_pool = np.arange(FIRST_FREE_ID + spec.classes, vocab)
    fillers = rng.choice(filler_pool, size=spec.template_len, replace=True)
    mid = spec.template_len // 2
    prompts = []
    for c in range(spec.classes):
        ids = [BOS_ID, *fillers[:mid].tolist(), class_token_id(c),
               *fillers[mid:].tolist(), EOS_ID]
        prompts.append(np.asarray(ids, dtype=np.int64))
    return SyntheticTask(spec, means, train_images, train_labels,
                         eval_images, eval_labels, prompts)


def centroid_accuracy(task: SyntheticTask) -> float:
    """Nearest-centroid accuracy on raw mean-pooled patches; validates that
    the task is separable at its configured scale."""
    pooled_train = task.train_images.mean(axis=1)
    centroids = np.stack([pooled_train[task.train_labels == c].mean(axis=0)
                          for c in range(task.classes)])
    pooled_eval = task.eval_images.mean(axis=1)
    dists = ((pooled_eval[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=-1)
    return float((dists.argmin(axis=1) == task.eval_labels).mean())
