"""Insertion mechanics, mask construction, progressive composition, and the
causality oracle for the text branch."""

from __future__ import annotations

import numpy as np
import numpy.testing as npt
import pytest

from repadapt import encoders as enc
from repadapt import numerics as nm
from repadapt import repspace as rs
from repadapt.encoders import (BOS_ID, EOS_ID, EncoderConfig, build_text_attention_mask,
                               encode_image, encode_text, init_image_encoder,
                               init_text_encoder, prc_mix)
from repadapt.errors import CapacityError, ConfigError, InputError, ShapeError


def _config(**overrides) -> EncoderConfig:
    base = dict(L=3, heads=2, d_v=8, d_t=8, M=4, N=10, vocab=16, J=2, K=2,
                beta=0.9, variant="shared")
    base.update(overrides)
    return EncoderConfig(**base)


def _space_and_stacks(config: EncoderConfig, seed=0):
    rng = np.random.default_rng(seed)
    space = rs.init_space(config.K, 6, seed=seed)
    count = config.L - config.J + 1
    stack_v = rs.init_shared_residual_stack("v", 6, config.d_v, config.J - 1,
                                            count, 2, rng)
    stack_t = rs.init_shared_residual_stack("t", 6, config.d_t, config.J - 1,
                                            count, 2, rng)
    for stack in (stack_v, stack_t):
        for a, b in zip(stack.lora_a, stack.lora_b):
            a.value[...] = rng.normal(0, 0.05, a.value.shape).astype(np.float32)
            b.value[...] = rng.normal(0, 0.05, b.value.shape).astype(np.float32)
    return space, stack_v, stack_t


def _patches(config, seed=0):
    return np.random.default_rng(seed).normal(size=(config.M, config.d_v)).astype(np.float32)


def _token_ids(config, length=6, seed=0):
    rng = np.random.default_rng(seed)
    middle = rng.integers(3, config.vocab, size=length - 2)
    return np.array([BOS_ID, *middle.tolist(), EOS_ID], dtype=np.int64)


# -- config validation -----------------------------------------------------------


@pytest.mark.parametrize("overrides", [dict(J=0), dict(J=5), dict(beta=1.5),
                                       dict(beta=-0.1), dict(d_v=9),
                                       dict(variant="other"), dict(K=-1)])
def test_config_validation(overrides):
    with pytest.raises(ConfigError):
        _config(**overrides)


def test_full_variant_forces_fresh_tokens():
    assert _config(variant="full", beta=0.3).effective_beta == 1.0
    assert _config(variant="shared", beta=0.3).effective_beta == 0.3


# -- insertion mechanics -----------------------------------------------------------


def test_disabled_insertion_reproduces_plain_backbone():
    cfg = _config()
    rng = np.random.default_rng(1)
    image = init_image_encoder(cfg, rng)
    text = init_text_encoder(cfg, rng)
    space, stack_v, stack_t = _space_and_stacks(cfg)
    patches = _patches(cfg)
    ids = _token_ids(cfg)

    plain_img = encode_image(image, patches, None, None)
    plain_txt = encode_text(text, ids, None, None)

    disabled = _config(J=cfg.L + 1)
    image_disabled = init_image_encoder(disabled, np.random.default_rng(1))
    # same rng stream: reconsume the image draws, then build the text stack
    rng2 = np.random.default_rng(1)
    init_image_encoder(disabled, rng2)
    text_disabled = init_text_encoder(disabled, rng2)

    off_img = encode_image(image_disabled, patches, space, stack_v)
    off_txt = encode_text(text_disabled, ids, space, stack_t)

    assert np.array_equal(plain_img.class_out.data, off_img.class_out.data)
    assert off_img.rep_out is None
    assert np.array_equal(plain_txt.eos_out.data, off_txt.eos_out.data)
    assert plain_txt.eos_index == off_txt.eos_index


def test_sequence_lengths_through_insertion():
    cfg = _config()
    rng = np.random.default_rng(2)
    image = init_image_encoder(cfg, rng)
    space, stack_v, _ = _space_and_stacks(cfg)
    result = encode_image(image, _patches(cfg), space, stack_v, keep_trace=True)
    lengths = [t.shape[0] for t in result.trace]
    expected = [1 + cfg.M if layer < cfg.J else 1 + cfg.K + cfg.M
                for layer in range(1, cfg.L + 1)]
    assert lengths == expected
    assert result.rep_out.shape == (cfg.K, cfg.d_v)


def test_text_eos_index_shift():
    cfg = _config(L=3, J=2, K=5, N=16, M=4)
    rng = np.random.default_rng(3)
    text = init_text_encoder(cfg, rng)
    space = rs.init_space(cfg.K, 6, seed=0)
    stack = rs.init_shared_residual_stack("t", 6, cfg.d_t, cfg.J - 1,
                                          cfg.L - cfg.J + 1, 2, rng)
    ids = _token_ids(cfg, length=8)  # EOS at index 7
    result = encode_text(text, ids, space, stack)
    assert result.eos_index == 7 + cfg.K
    plain = encode_text(text, ids, None, None)
    assert plain.eos_index == 7


def test_text_input_validation():
    cfg = _config()
    text = init_text_encoder(cfg, np.random.default_rng(4))
    with pytest.raises(InputError):
        encode_text(text, [5, 6, EOS_ID], None, None)  # missing BOS
    with pytest.raises(InputError):
        encode_text(text, [BOS_ID, 5, 6], None, None)  # missing EOS
    with pytest.raises(InputError):
        encode_text(text, [BOS_ID, EOS_ID, 5, EOS_ID], None, None)  # two EOS
    with pytest.raises(CapacityError):
        encode_text(text, [BOS_ID] + [5] * cfg.N + [EOS_ID], None, None)


def test_image_patch_shape_validation():
    cfg = _config()
    image = init_image_encoder(cfg, np.random.default_rng(5))
    with pytest.raises(ShapeError):
        encode_image(image, np.zeros((cfg.M + 1, cfg.d_v), dtype=np.float32), None, None)


# -- attention masks ----------------------------------------------------------------


def test_mask_without_insertion_is_lower_triangular():
    cfg = _config()
    mask = build_text_attention_mask(3, 0, 1, layer=1, config=cfg)
    allowed = mask == 0.0
    npt.assert_array_equal(allowed, np.tril(np.ones((3, 3), dtype=bool)))


def test_mask_extended_indexing():
    cfg = _config(J=2)
    mask = build_text_attention_mask(3, 2, 1, layer=2, config=cfg)
    assert mask.shape == (5, 5)
    # first original text token lands at extended index 3
    allowed_row = mask[3] == 0.0
    npt.assert_array_equal(allowed_row, np.array([True, True, True, True, False]))
    # below the insertion layer the mask stays unextended
    assert build_text_attention_mask(3, 2, 1, layer=1, config=cfg).shape == (3, 3)


def test_mask_every_row_has_an_allowed_position():
    cfg = _config()
    for n in (1, 3, 7):
        for K in (0, 2):
            mask = build_text_attention_mask(n, K, 1, layer=cfg.J, config=cfg)
            assert ((mask == 0.0).sum(axis=-1) >= 1).all()


def test_mask_insert_position_range():
    cfg = _config()
    for bad in (0, 4):
        with pytest.raises(ConfigError):
            build_text_attention_mask(3, 2, bad, layer=2, config=cfg)


# -- progressive composition -----------------------------------------------------------


def test_prc_mix_endpoints_and_arithmetic():
    fresh = nm.constant(np.full((2, 3), 1.0, dtype=np.float32))
    carried = nm.constant(np.zeros((2, 3), dtype=np.float32))
    assert np.array_equal(prc_mix(fresh, carried, 1.0).data, fresh.data)
    assert np.array_equal(prc_mix(fresh, carried, 0.0).data, carried.data)
    npt.assert_allclose(prc_mix(fresh, carried, 0.9).data, np.full((2, 3), 0.9), atol=1e-7)


def test_prc_mix_shape_mismatch():
    with pytest.raises(ShapeError):
        prc_mix(nm.constant(np.zeros((2, 3))), nm.constant(np.zeros((3, 2))), 0.5)


def test_beta_zero_carries_first_insertion_forward():
    """With beta=0 only the layer-J tokens propagate; the later aligners
    cannot influence the output."""
    cfg = _config(L=3, J=2, beta=0.0)
    rng = np.random.default_rng(6)
    image = init_image_encoder(cfg, rng)
    space, stack_v, _ = _space_and_stacks(cfg, seed=1)
    base = encode_image(image, _patches(cfg), space, stack_v)
    # perturb the aligner used above layer J; beta=0 must ignore it
    stack_v.lora_b[-1].value[...] += 0.5
    perturbed = encode_image(image, _patches(cfg), space, stack_v)
    assert np.array_equal(base.class_out.data, perturbed.class_out.data)
    assert np.array_equal(base.rep_out.data, perturbed.rep_out.data)
    # with beta > 0 the same perturbation must matter
    cfg2 = _config(L=3, J=2, beta=0.9)
    image2 = init_image_encoder(cfg2, np.random.default_rng(6))
    base2 = encode_image(image2, _patches(cfg2), space, stack_v)
    stack_v.lora_b[-1].value[...] += 0.5
    perturbed2 = encode_image(image2, _patches(cfg2), space, stack_v)
    assert not np.array_equal(base2.rep_out.data, perturbed2.rep_out.data)


def test_shared_with_zero_residuals_equals_full_of_shared_weight():
    """Zeroed residuals under beta=1 collapse to the full variant whose
    per-layer weights all equal the shared weight."""
    cfg_shared = _config(variant="shared", beta=1.0)
    cfg_full = _config(variant="full", beta=0.3)  # forced to 1 internally
    rng = np.random.default_rng(7)
    image = init_image_encoder(cfg_shared, rng)
    space, stack_v, stack_t = _space_and_stacks(cfg_shared, seed=2)
    for stack in (stack_v, stack_t):
        for a, b in zip(stack.lora_a, stack.lora_b):
            b.value[...] = 0.0
    full_v = rs.init_full_stack("v", 6, cfg_full.d_v, cfg_full.J - 1,
                                cfg_full.L - cfg_full.J + 1, np.random.default_rng(8))
    for idx in range(len(full_v.weights)):
        full_v.weights[idx].value[...] = stack_v.shared_weight.value
        full_v.biases[idx].value[...] = stack_v.shared_bias.value
    image_full = init_image_encoder(cfg_full, np.random.default_rng(7))
    patches = _patches(cfg_shared)
    out_shared = encode_image(image, patches, space, stack_v)
    out_full = encode_image(image_full, patches, space, full_v)
    assert np.array_equal(out_shared.class_out.data, out_full.class_out.data)
    assert np.array_equal(out_shared.rep_out.data, out_full.rep_out.data)


def test_inserted_tokens_positional_flag():
    """The optional flag adds the slot's positional rows to the layer-J
    tokens; off (the default) leaves the fresh tokens untouched."""
    cfg_off = _config()
    cfg_on = _config(insert_pos_embed=True)
    image_off = init_image_encoder(cfg_off, np.random.default_rng(9))
    image_on = init_image_encoder(cfg_on, np.random.default_rng(9))
    space, stack_v, _ = _space_and_stacks(cfg_off, seed=5)
    patches = _patches(cfg_off)
    out_off = encode_image(image_off, patches, space, stack_v)
    out_on = encode_image(image_on, patches, space, stack_v)
    assert not np.array_equal(out_off.rep_out.data, out_on.rep_out.data)
    # and the adjustment is exactly the positional rows at the entry layer
    fresh = rs.align_space_tokens(space, stack_v, cfg_off.J - 1, live=False).tokens.data
    shifted = enc._maybe_add_positions(
        nm.constant(fresh), cfg_on.J, cfg_on, image_on.pos_embed, False).data
    npt.assert_allclose(shifted - fresh,
                        image_on.pos_embed.value[1:1 + cfg_on.K], atol=1e-7)


# -- causality oracle ---------------------------------------------------------------


@pytest.mark.parametrize("K", [0, 3, 5])
def test_text_causality_perturbation_oracle(K):
    cfg = _config(L=3, J=2, K=K, N=12, vocab=32)
    rng = np.random.default_rng(20 + K)
    text = init_text_encoder(cfg, rng)
    space = rs.init_space(max(K, 1), 6, seed=3)
    stack = (rs.init_shared_residual_stack("t", 6, cfg.d_t, cfg.J - 1,
                                           cfg.L - cfg.J + 1, 2, rng)
             if K > 0 else None)
    trials = 0
    while trials < 34:
        length = int(rng.integers(4, 9))
        ids = np.array([BOS_ID, *rng.integers(3, cfg.vocab, size=length - 2).tolist(),
                        EOS_ID], dtype=np.int64)
        j = int(rng.integers(1, length))
        perturbed = ids.copy()
        replacement = int(rng.integers(3, cfg.vocab))
        if perturbed[j] == replacement or replacement in (BOS_ID, EOS_ID):
            continue
        if perturbed[j] == EOS_ID:
            continue
        base = encode_text(text, ids, space if K else None, stack, keep_trace=True)
        moved = encode_text(text, perturbed, space if K else None, stack, keep_trace=True)
        shift = K if (K and cfg.J <= cfg.L) else 0
        cut = j + shift  # post-insertion index of the perturbed token
        for layer in range(cfg.L):
            layer_shift = shift if (layer + 1) >= cfg.J else 0
            boundary = j + layer_shift
            assert np.array_equal(base.trace[layer][:boundary],
                                  moved.trace[layer][:boundary]), (trials, layer)
        trials += 1


def test_padding_after_eos_never_reaches_eos_output():
    cfg = _config(L=3, J=2, K=3, N=12, vocab=32)
    rng = np.random.default_rng(30)
    text = init_text_encoder(cfg, rng)
    space, _, stack_t = _space_and_stacks(cfg, seed=4)
    ids = np.array([BOS_ID, 5, 9, EOS_ID, 0, 0], dtype=np.int64)
    perturbed = ids.copy()
    perturbed[-1] = 7
    out_a = encode_text(text, ids, space, stack_t)
    out_b = encode_text(text, perturbed, space, stack_t)
    assert np.array_equal(out_a.eos_out.data, out_b.eos_out.data)
    assert out_a.eos_index == out_b.eos_index == 3 + cfg.K
