"""The shared representation space and the aligners that carry its tokens
into each modality.

Two aligner families exist: one full linear map per inserted layer, or a
single shared map per modality plus per-layer low-rank residuals. Both
expose the same composition surface so the encoders never care which one
they were given.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .errors import ConfigError, ShapeError
from .numerics import Parameter, Tensor

INIT_STD = 0.02


@dataclass
class RepresentationSpace:
    """The learnable (K, d_r) token matrix shared by both modalities."""

    tokens: Parameter

    @property
    def K(self) -> int:
        return self.tokens.value.shape[0]

    @property
    def d_r(self) -> int:
        return self.tokens.value.shape[1]


@dataclass
class FullAlignerStack:
    """One independent (d_r, d_m) linear map per inserted layer."""

    modality: str
    start: int  # first aligner index, J-1
    weights: list[Parameter]
    biases: list[Parameter]

    def layer_range(self) -> range:
        return range(self.start, self.start + len(self.weights))


@dataclass
class SharedResidualStack:
    """A shared (d_r, d_m) map plus rank-r1 residuals A_i B_i per layer."""

    modality: str
    start: int
    shared_weight: Parameter
    shared_bias: Parameter
    lora_a: list[Parameter]
    lora_b: list[Parameter]
    rank: int

    def layer_range(self) -> range:
        return range(self.start, self.start + len(self.lora_a))


AlignerStack = FullAlignerStack | SharedResidualStack


@dataclass
class AlignedTokens:
    """Space tokens carried into one modality at one layer: (K, d_m)."""

    modality: str
    layer: int
    tokens: Tensor


def init_space(K: int, d_r: int, std: float = INIT_STD, seed: int = 0,
               name: str = "space.tokens", dtype=np.float32) -> RepresentationSpace:
    """Draw the token matrix from a zero-mean Gaussian, reproducibly."""
    if K < 1 or d_r < 1:
        raise ConfigError(f"token count and dimension must be positive, got K={K}, d_r={d_r}")
    if std <= 0:
        raise ConfigError(f"init std must be positive, got {std}")
    rng = np.random.default_rng(seed)
    tokens = rng.normal(0.0, std, size=(K, d_r)).astype(dtype)
    return RepresentationSpace(Parameter(name, tokens, trainable=True))


def init_full_stack(modality: str, d_r: int, d_m: int, start: int, count: int,
                    rng: np.random.Generator, std: float = INIT_STD,
                    prefix: str = "aligner", dtype=np.float32) -> FullAlignerStack:
    """All layers start from one identical draw, so the stack behaves like a
    shared map plus (initially zero) per-layer deviations."""
    base = rng.normal(0.0, std, size=(d_r, d_m)).astype(dtype)
    weights, biases = [], []
    for i in range(start, start + count):
        weights.append(Parameter(f"{prefix}.{modality}.{i}.weight", base.copy(),
                                 trainable=True, decay=True))
        biases.append(Parameter(f"{prefix}.{modality}.{i}.bias",
                                np.zeros(d_m, dtype=dtype), trainable=True))
    return FullAlignerStack(modality, start, weights, biases)


def init_shared_residual_stack(modality: str, d_r: int, d_m: int, start: int,
                               count: int, rank: int, rng: np.random.Generator,
                               std: float = INIT_STD, prefix: str = "aligner",
                               dtype=np.float32) -> SharedResidualStack:
    """Shared map ~ N(0, std^2); residual A ~ N(0, std^2), B = 0 so every
    composed weight equals the shared weight at step 0."""
    if rank < 1:
        raise ConfigError(f"residual rank must be positive, got {rank}")
    shared_w = Parameter(f"{prefix}.{modality}.shared.weight",
                         rng.normal(0.0, std, size=(d_r, d_m)).astype(dtype),
                         trainable=True, decay=True)
    shared_b = Parameter(f"{prefix}.{modality}.shared.bias",
                         np.zeros(d_m, dtype=dtype), trainable=True)
    lora_a, lora_b = [], []
    for i in range(start, start + count):
        lora_a.append(Parameter(f"{prefix}.{modality}.{i}.lora_a",
                                rng.normal(0.0, std, size=(d_r, rank)).astype(dtype),
                                trainable=True, decay=True))
        lora_b.append(Parameter(f"{prefix}.{modality}.{i}.lora_b",
                                np.zeros((rank, d_m), dtype=dtype),
                                trainable=True, decay=True))
    return SharedResidualStack(modality, start, shared_w, shared_b, lora_a, lora_b, rank)


def stack_parameters(stack: AlignerStack) -> list[Parameter]:
    if isinstance(stack, FullAlignerStack):
        return list(stack.weights) + list(stack.biases)
    return [stack.shared_weight, stack.shared_bias] + list(stack.lora_a) + list(stack.lora_b)


def _check_layer(stack: AlignerStack, layer: int) -> int:
    rng = stack.layer_range()
    if layer not in rng:
        raise ConfigError(
            f"aligner layer {layer} outside insertion range "
            f"[{rng.start}, {rng.stop - 1}] for modality {stack.modality!r}")
    return layer - stack.start


def compose_aligner_weight(stack: AlignerStack, layer: int,
                           live: bool = True) -> tuple[Tensor, Tensor]:
    """The effective (weight, bias) for one layer, inside the gradient graph.

    Full stacks return the stored pair; shared-residual stacks return
    shared + A_i @ B_i with the single shared bias.
    """
    idx = _check_layer(stack, layer)
    if isinstance(stack, FullAlignerStack):
        return stack.weights[idx].as_tensor(live), stack.biases[idx].as_tensor(live)
    delta = nm.matmul(stack.lora_a[idx].as_tensor(live), stack.lora_b[idx].as_tensor(live))
    weight = nm.add(stack.shared_weight.as_tensor(live), delta)
    return weight, stack.shared_bias.as_tensor(live)


def align_space_tokens(space: RepresentationSpace, stack: AlignerStack,
                       layer: int, live: bool = True) -> AlignedTokens:
    """Project the space tokens into the stack's modality at ``layer``."""
    weight, bias = compose_aligner_weight(stack, layer, live=live)
    if space.d_r != weight.shape[0]:
        raise ShapeError(
            f"space dimension {space.d_r} does not match aligner input {weight.shape[0]}")
    out = nm.add(nm.matmul(space.tokens.as_tensor(live), weight), bias)
    return AlignedTokens(stack.modality, layer, out)
