"""Checkpoint round-trips, integrity detection, and version gating."""

from __future__ import annotations

import json
import struct

import numpy as np
import pytest

from repadapt.checkpoint import (FORMAT_VERSION, MAGIC, load_into, read_checkpoint,
                                 save_checkpoint)
from repadapt.errors import (CheckpointError, CheckpointIntegrityError,
                             CheckpointVersionError)
from repadapt.trainer import TrainConfig, build_model, init_optimizer, train_step
from repadapt.trainer import reference_text_features


def _trained_state(tiny_model_config, tiny_task, steps=3, seed=4):
    state = build_model(tiny_model_config, seed=seed)
    opt = init_optimizer(state, TrainConfig(steps=steps, batch=2, seed=seed))
    frozen_text = reference_text_features(state, tiny_task.prompts)
    for _ in range(steps):
        train_step(state, opt, tiny_task.train_images[:2], tiny_task.train_labels[:2],
                   tiny_task.prompts, frozen_text)
    return state


def test_roundtrip_bit_exact(tiny_model_config, tiny_task, tmp_path):
    state = _trained_state(tiny_model_config, tiny_task)
    path = tmp_path / "model.ckpt"
    save_checkpoint(state, path, config_echo={"seed": 4})
    restored = build_model(tiny_model_config, seed=99)  # different backbone
    manifest = load_into(restored, path)
    assert manifest["config"]["seed"] == 4
    for name, p in state.params.items():
        assert np.array_equal(p.value, restored.params[name].value), name
    assert restored.frozen_fingerprint() == state.frozen_fingerprint()


def test_manifest_covers_every_parameter(tiny_model_config, tiny_task, tmp_path):
    state = _trained_state(tiny_model_config, tiny_task)
    path = tmp_path / "model.ckpt"
    save_checkpoint(state, path)
    manifest, tensors = read_checkpoint(path)
    assert len(manifest["tensors"]) == len(state.params)
    assert set(tensors) == set(state.params)


def test_single_byte_corruption_detected(tiny_model_config, tiny_task, tmp_path):
    state = _trained_state(tiny_model_config, tiny_task)
    path = tmp_path / "model.ckpt"
    save_checkpoint(state, path)
    raw = bytearray(path.read_bytes())
    raw[-5] ^= 0xFF  # flip one payload byte
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointIntegrityError, match="checksum"):
        read_checkpoint(path)


def test_truncated_payload_detected(tiny_model_config, tiny_task, tmp_path):
    state = _trained_state(tiny_model_config, tiny_task)
    path = tmp_path / "model.ckpt"
    save_checkpoint(state, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(CheckpointIntegrityError):
        read_checkpoint(path)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"NOTACKPT" + b"\x00" * 16)
    with pytest.raises(CheckpointIntegrityError, match="magic"):
        read_checkpoint(path)


def test_version_mismatch_names_both_versions(tiny_model_config, tiny_task, tmp_path):
    state = _trained_state(tiny_model_config, tiny_task)
    path = tmp_path / "model.ckpt"
    save_checkpoint(state, path)
    raw = path.read_bytes()
    (blob_len,) = struct.unpack_from("<I", raw, len(MAGIC))
    start = len(MAGIC) + 4
    manifest = json.loads(raw[start:start + blob_len])
    manifest["format_version"] = FORMAT_VERSION + 7
    blob = json.dumps(manifest, sort_keys=True).encode()
    path.write_bytes(MAGIC + struct.pack("<I", len(blob)) + blob + raw[start + blob_len:])
    with pytest.raises(CheckpointVersionError) as excinfo:
        read_checkpoint(path)
    assert str(FORMAT_VERSION + 7) in str(excinfo.value)
    assert str(FORMAT_VERSION) in str(excinfo.value)


def test_name_mismatch_rejected(tiny_model_config, tiny_task, tmp_path):
    from repadapt.trainer import ModelConfig

    state = _trained_state(tiny_model_config, tiny_task)
    path = tmp_path / "model.ckpt"
    save_checkpoint(state, path)
    other = build_model(ModelConfig(**{**tiny_model_config.__dict__, "variant": "full"}),
                        seed=4)
    with pytest.raises(CheckpointError, match="names"):
        load_into(other, path)
