"""Classification probabilities, the composite training loss, and the
decoupled base/novel inference rule.

The loss combines two cross-entropies (class branch and representation
branch, balanced by alpha) with cosine regularizers that pin the adapted
class and text features to the frozen reference features, weighted by
lambda. Inference mixes the two probability vectors for base classes and
uses the class branch alone for novel classes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .errors import ConfigError, ContractError, NumericDomainError
from .numerics import Tensor

NORM_EPS = 1e-8
PROB_CLAMP = 1e-12
ZERO_NORM_FLOOR = 1e-12


class ProbabilityClampWarning(UserWarning):
    """A label probability hit the epsilon clamp inside the cross-entropy."""


@dataclass(frozen=True)
class LossWeights:
    alpha: float
    lam: float
    tau: float = 0.01

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ConfigError(f"alpha={self.alpha} outside [0, 1]")
        if self.lam < 0.0:
            raise ConfigError(f"lambda={self.lam} must be nonnegative")
        if self.tau <= 0.0:
            raise ConfigError(f"tau={self.tau} must be positive")


@dataclass(frozen=True)
class ReferenceFeatures:
    """Frozen zero-shot features: per-sample image feature and the cached
    per-class text features. Never receive gradients."""

    image: np.ndarray        # (d,)
    class_texts: np.ndarray  # (C, d)


@dataclass
class LossBreakdown:
    ce_c: float
    ce_r: float
    cos_v: float
    cos_t: float
    total: float
    clamp_events: int = 0


def _check_norms(data: np.ndarray, what: str) -> None:
    norms = np.sqrt((np.asarray(data, dtype=np.float64) ** 2).sum(axis=-1))
    if (norms < ZERO_NORM_FLOOR).any():
        raise NumericDomainError(f"zero-norm {what} beyond the epsilon guard")


def class_probabilities(feature: Tensor, classifiers: Tensor | np.ndarray,
                        tau: float) -> Tensor:
    """Softmax over cosine similarities divided by tau.

    ``feature`` is (d,), ``classifiers`` is (C, d). Cosine normalisation
    makes the result invariant under positive rescaling of either side.
    """
    if tau <= 0:
        raise ConfigError(f"tau={tau} must be positive")
    if not isinstance(classifiers, Tensor):
        classifiers = nm.constant(classifiers, dtype=np.asarray(classifiers).dtype)
    _check_norms(feature.data, "feature")
    _check_norms(classifiers.data, "classifier")
    f_hat = nm.l2_normalize(feature, NORM_EPS)
    w_hat = nm.l2_normalize(classifiers, NORM_EPS)
    sims = nm.matmul(w_hat, f_hat)
    logits = nm.mul(sims, nm.constant(1.0 / tau, feature.dtype))
    return nm.softmax_rows(logits)


def cross_entropy_loss(probs: Tensor, label: int) -> Tensor:
    """-log p[label], with the probability clamped away from zero.

    Hitting the clamp is reported through :class:`ProbabilityClampWarning`.
    """
    C = probs.data.shape[-1]
    if not (0 <= label < C):
        raise ContractError(f"label {label} outside [0, {C})")
    onehot = np.zeros(C, dtype=probs.dtype)
    onehot[label] = 1.0
    picked = nm.sum_(nm.mul(probs, nm.constant(onehot, probs.dtype)))
    if float(picked.data) < PROB_CLAMP:
        warnings.warn(f"label probability {float(picked.data):.3e} clamped to {PROB_CLAMP}",
                      ProbabilityClampWarning)
        picked = nm.add(picked, nm.constant(PROB_CLAMP, probs.dtype))
    return nm.mul(nm.log(picked), nm.constant(-1.0, probs.dtype))


def cosine_distance(a: Tensor, b: Tensor | np.ndarray) -> Tensor:
    """1 - cos(a, b) with epsilon-guarded norms."""
    if not isinstance(b, Tensor):
        b = nm.constant(b, dtype=np.asarray(b).dtype)
    _check_norms(a.data, "vector")
    _check_norms(b.data, "vector")
    a_hat = nm.l2_normalize(a, NORM_EPS)
    b_hat = nm.l2_normalize(b, NORM_EPS)
    cos = nm.sum_(nm.mul(a_hat, b_hat), axis=-1)
    return nm.sub(nm.constant(1.0, a.dtype), cos)


def text_consistency(adapted: Tensor, frozen: np.ndarray) -> Tensor:
    """Mean cosine distance between adapted and frozen text features, over
    the C class pairs. ``adapted`` is (C, d); ``frozen`` is (C, d)."""
    if adapted.shape != frozen.shape:
        raise ContractError(f"text feature shapes differ: {adapted.shape} vs {frozen.shape}")
    return nm.mean(cosine_distance(adapted, frozen))


def total_loss(ce_c: Tensor, ce_r: Tensor, cos_v: Tensor, cos_t: Tensor,
               weights: LossWeights) -> tuple[Tensor, LossBreakdown]:
    """alpha * ce_c + (1 - alpha) * ce_r + lambda * (cos_v + cos_t)."""
    dtype = ce_c.dtype
    total = nm.add(
        nm.add(nm.mul(ce_c, nm.constant(weights.alpha, dtype)),
               nm.mul(ce_r, nm.constant(1.0 - weights.alpha, dtype))),
        nm.mul(nm.add(cos_v, cos_t), nm.constant(weights.lam, dtype)))
    breakdown = LossBreakdown(ce_c=float(ce_c.data), ce_r=float(ce_r.data),
                              cos_v=float(cos_v.data), cos_t=float(cos_t.data),
                              total=float(total.data))
    return total, breakdown


def infer_probabilities(p_c: np.ndarray, p_r: np.ndarray | None, mode: str,
                        alpha: float) -> np.ndarray:
    """Decoupled inference: base classes mix the two probability vectors,
    novel classes rely on the class branch alone."""
    if mode not in ("base", "novel"):
        raise ContractError(f"unknown inference mode {mode!r}")
    if mode == "novel":
        return p_c
    if p_r is None:
        raise ContractError("base-mode inference requires representation probabilities")
    if p_c.shape != p_r.shape:
        raise ContractError(f"probability shapes differ: {p_c.shape} vs {p_r.shape}")
    return alpha * p_c + (1.0 - alpha) * p_r
