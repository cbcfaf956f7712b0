"""Closed-form trainable-parameter accounting.

The totals are additive over named groups so that removing a group (for
example the text aligners under the text-branch ablation) shrinks the total
by exactly that group's size. A switch controls whether the shared-residual
variant also budgets per-layer residual biases; the default matches the
bias-free residual convention used by the builder.
"""

from __future__ import annotations

from .errors import ConfigError
from .trainer import ModelConfig


def count_trainable_parameters(config: ModelConfig,
                               include_residual_biases: bool = False
                               ) -> tuple[int, dict[str, int]]:
    """Total trainable scalars plus a per-group breakdown for one config."""
    layers = config.L - config.J + 1
    if layers < 0:
        raise ConfigError(f"J={config.J} exceeds L+1={config.L + 1}")
    groups: dict[str, int] = {}
    if config.shared_space:
        groups["space"] = config.K * config.d_r
    else:
        groups["space.v"] = config.K * config.d_r
        groups["space.t"] = config.K * config.d_r

    branches = []
    if config.insert_image:
        branches.append(("v", config.d_v))
    if config.insert_text:
        branches.append(("t", config.d_t))
    for modality, width in branches:
        if layers == 0:
            continue
        if config.variant == "full":
            groups[f"aligner.{modality}"] = layers * (config.d_r * width + width)
        else:
            shared = config.d_r * width + width
            residual = layers * (config.d_r * config.r1 + config.r1 * width)
            if include_residual_biases:
                residual += layers * width
            groups[f"aligner.{modality}"] = shared + residual

    if config.insert_image:
        if config.variant == "full":
            groups["proj.rep"] = config.d_v * config.d
        else:
            groups["proj.rep"] = config.d_v * config.r2 + config.r2 * config.d
    return sum(groups.values()), groups
