"""Closed-form parameter accounting: reference totals, group additivity,
and the residual-bias switch."""

from __future__ import annotations

import pytest

from repadapt.accounting import count_trainable_parameters
from repadapt.trainer import ModelConfig, build_model

REFERENCE = dict(L=12, heads=8, d_v=768, d_t=512, d=512, d_r=512, K=5, J=6,
                 r1=4, r2=64)


def test_reference_totals():
    full, _ = count_trainable_parameters(ModelConfig(variant="full", **REFERENCE))
    assert full == 4_992_256
    shared, _ = count_trainable_parameters(ModelConfig(variant="shared", **REFERENCE))
    assert shared == 805_632
    narrow, _ = count_trainable_parameters(
        ModelConfig(variant="shared", **{**REFERENCE, "d_r": 32}))
    assert narrow == 161_952


def test_totals_additive_over_groups():
    for variant in ("full", "shared"):
        config = ModelConfig(variant=variant, **REFERENCE)
        total, groups = count_trainable_parameters(config)
        assert total == sum(groups.values())
        # dropping the text branch removes exactly its aligner group
        no_text = ModelConfig(variant=variant, insert_text=False, **REFERENCE)
        reduced, reduced_groups = count_trainable_parameters(no_text)
        assert total - reduced == groups["aligner.t"]
        assert "aligner.t" not in reduced_groups


def test_image_branch_removal_drops_rep_projection():
    config = ModelConfig(variant="shared", insert_image=False, **REFERENCE)
    total, groups = count_trainable_parameters(config)
    assert "aligner.v" not in groups and "proj.rep" not in groups
    base_total, base_groups = count_trainable_parameters(
        ModelConfig(variant="shared", **REFERENCE))
    assert base_total - total == base_groups["aligner.v"] + base_groups["proj.rep"]


def test_separate_spaces_double_the_token_budget():
    config = ModelConfig(variant="shared", shared_space=False, **REFERENCE)
    _, groups = count_trainable_parameters(config)
    assert groups["space.v"] == groups["space.t"] == REFERENCE["K"] * REFERENCE["d_r"]


def test_residual_bias_switch_documents_alternative_total():
    config = ModelConfig(variant="shared", **REFERENCE)
    plain, _ = count_trainable_parameters(config)
    with_biases, _ = count_trainable_parameters(config, include_residual_biases=True)
    layers = REFERENCE["L"] - REFERENCE["J"] + 1
    assert with_biases - plain == layers * (REFERENCE["d_v"] + REFERENCE["d_t"])
    # the switch never affects the full variant
    full = ModelConfig(variant="full", **REFERENCE)
    assert (count_trainable_parameters(full)[0]
            == count_trainable_parameters(full, include_residual_biases=True)[0])


@pytest.mark.parametrize("variant", ["full", "shared"])
def test_formula_matches_builder_at_desk_scale(variant):
    for overrides in ({}, {"insert_text": False}, {"shared_space": False},
                      {"J": 5}, {"insert_image": False}):
        config = ModelConfig(variant=variant, **overrides)
        formula, _ = count_trainable_parameters(config)
        state = build_model(config, seed=1)
        assert state.trainable_count() == formula, overrides
