"""Projection heads mapping encoder outputs into the shared embedding space.

The class and text projections are frozen, bias-free linear maps. The
representation projection is trainable: either a full matrix initialised as
a copy of the class projection (``full`` variant) or the frozen class
projection plus a rank-r2 residual A_r B_r (``shared`` variant). Pooling is
always mean-then-project.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .errors import DegenerateInputError, ShapeError
from .numerics import Parameter, Tensor
from .repspace import INIT_STD


@dataclass
class ProjectionHeads:
    """The three projection maps plus the trainable representation weights."""

    class_weight: Parameter          # (d_v, d), frozen
    text_weight: Parameter           # (d_t, d), frozen
    rep_weight: Parameter | None     # (d_v, d), trainable (full variant)
    rep_lora_a: Parameter | None     # (d_v, r2), trainable (shared variant)
    rep_lora_b: Parameter | None     # (r2, d), trainable (shared variant)

    def parameters(self) -> list[Parameter]:
        out = [self.class_weight, self.text_weight]
        for p in (self.rep_weight, self.rep_lora_a, self.rep_lora_b):
            if p is not None:
                out.append(p)
        return out

    def trainable_parameters(self) -> list[Parameter]:
        return [p for p in self.parameters() if p.trainable]


def init_heads(d_v: int, d_t: int, d: int, variant: str, r2: int,
               rng: np.random.Generator, dtype=np.float32,
               with_rep: bool = True) -> ProjectionHeads:
    class_w = Parameter("proj.class.weight",
                        (rng.normal(0.0, d_v ** -0.5, size=(d_v, d))).astype(dtype),
                        trainable=False)
    text_w = Parameter("proj.text.weight",
                       (rng.normal(0.0, d_t ** -0.5, size=(d_t, d))).astype(dtype),
                       trainable=False)
    if not with_rep:
        # no representation tokens exist without the image branch
        return ProjectionHeads(class_w, text_w, None, None, None)
    if variant == "full":
        # starts as a copy of the frozen class projection, then trains freely
        rep_w = Parameter("proj.rep.weight", class_w.value.copy(),
                          trainable=True, decay=True)
        return ProjectionHeads(class_w, text_w, rep_w, None, None)
    lora_a = Parameter("proj.rep.lora_a",
                       rng.normal(0.0, INIT_STD, size=(d_v, r2)).astype(dtype),
                       trainable=True, decay=True)
    lora_b = Parameter("proj.rep.lora_b", np.zeros((r2, d), dtype=dtype),
                       trainable=True, decay=True)
    return ProjectionHeads(class_w, text_w, None, lora_a, lora_b)


def pool_representation(rep_out: Tensor) -> Tensor:
    """Arithmetic mean over the K token rows of (K, d_v)."""
    if rep_out.data.ndim != 2 or rep_out.shape[0] < 1:
        raise DegenerateInputError(f"pooling needs at least one (K, d) row, got shape {rep_out.shape}")
    return nm.mean(rep_out, axis=0)


def project_class_feature(heads: ProjectionHeads, class_out: Tensor,
                          live: bool = True) -> Tensor:
    """Frozen linear map of the class output into the shared space."""
    _check_width(class_out, heads.class_weight.value.shape[0])
    return nm.matmul(class_out, heads.class_weight.as_tensor(live))


def project_text_feature(heads: ProjectionHeads, eos_out: Tensor,
                         live: bool = True) -> Tensor:
    """Frozen linear map of the EOS output into the shared space."""
    _check_width(eos_out, heads.text_weight.value.shape[0])
    return nm.matmul(eos_out, heads.text_weight.as_tensor(live))


def effective_rep_weight(heads: ProjectionHeads, live: bool = True) -> Tensor:
    """The representation projection actually applied: a full trainable
    matrix, or frozen class weight plus the low-rank residual."""
    if heads.rep_weight is not None:
        return heads.rep_weight.as_tensor(live)
    if heads.rep_lora_a is None:
        raise DegenerateInputError("this model carries no representation projection")
    delta = nm.matmul(heads.rep_lora_a.as_tensor(live), heads.rep_lora_b.as_tensor(live))
    return nm.add(heads.class_weight.as_tensor(False), delta)


def project_representation_feature(heads: ProjectionHeads, pooled: Tensor,
                                   live: bool = True) -> Tensor:
    """Map the pooled representation output through the effective weight."""
    _check_width(pooled, heads.class_weight.value.shape[0])
    return nm.matmul(pooled, effective_rep_weight(heads, live=live))


def _check_width(feature: Tensor, expected: int) -> None:
    if feature.data.shape[-1] != expected:
        raise ShapeError(f"feature width {feature.data.shape[-1]} does not match projection input {expected}")
