"""Single-file checkpoints: a JSON manifest followed by a raw payload.

Layout: an 8-byte magic, a little-endian uint32 manifest length, the UTF-8
manifest JSON, then the payload — every named tensor as little-endian
float32, row-major, concatenated in manifest order. The manifest carries the
format version, a config echo, the tensor names/shapes, and a SHA-256 of
the payload so truncation or corruption is detected on load.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError, CheckpointIntegrityError, CheckpointVersionError
from .trainer import ModelState

MAGIC = b"RPADCKPT"
FORMAT_VERSION = 1
_PAYLOAD_DTYPE = np.dtype("<f4")


def save_checkpoint(state: ModelState, path: str | Path,
                    config_echo: dict | None = None) -> None:
    """Write every model parameter (frozen and trainable) to ``path``."""
    path = Path(path)
    names = list(state.params)
    chunks = []
    for name in names:
        value = state.params[name].value
        chunks.append(np.ascontiguousarray(value, dtype=_PAYLOAD_DTYPE).tobytes())
    payload = b"".join(chunks)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": config_echo or {},
        "tensors": [{"name": name, "shape": list(state.params[name].value.shape)}
                    for name in names],
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(payload)


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse and verify a checkpoint; returns (manifest, tensors by name)."""
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 4 or raw[:len(MAGIC)] != MAGIC:
        raise CheckpointIntegrityError(f"{path}: not a checkpoint (bad magic)")
    offset = len(MAGIC)
    (blob_len,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    if len(raw) < offset + blob_len:
        raise CheckpointIntegrityError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[offset:offset + blob_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointIntegrityError(f"{path}: unreadable manifest ({exc})") from exc
    offset += blob_len
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version} but this reader expects {FORMAT_VERSION}")
    payload = raw[offset:]
    expected = sum(int(np.prod(t["shape"])) for t in manifest["tensors"])
    if len(payload) != expected * _PAYLOAD_DTYPE.itemsize:
        raise CheckpointIntegrityError(
            f"{path}: payload holds {len(payload)} bytes, manifest declares "
            f"{expected * _PAYLOAD_DTYPE.itemsize}")
    digest = hashlib.sha256(payload).hexdigest()
    if digest != manifest["payload_sha256"]:
        raise CheckpointIntegrityError(f"{path}: payload checksum mismatch")
    tensors: dict[str, np.ndarray] = {}
    cursor = 0
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        flat = np.frombuffer(payload, dtype=_PAYLOAD_DTYPE, count=count,
                             offset=cursor * _PAYLOAD_DTYPE.itemsize)
        tensors[entry["name"]] = flat.reshape(shape).astype(np.float32)
        cursor += count
    return manifest, tensors


def load_into(state: ModelState, path: str | Path) -> dict:
    """Restore a checkpoint into ``state``; names and shapes must match the
    model exactly. Returns the manifest."""
    manifest, tensors = read_checkpoint(path)
    model_names = set(state.params)
    file_names = set(tensors)
    if model_names != file_names:
        missing = sorted(model_names - file_names)
        extra = sorted(file_names - model_names)
        raise CheckpointError(
            f"{path}: tensor names do not match the model "
            f"(missing {missing[:3]}, unexpected {extra[:3]})")
    for name, value in tensors.items():
        param = state.params[name]
        if param.value.shape != value.shape:
            raise CheckpointError(
                f"{path}: tensor {name!r} has shape {value.shape}, model expects "
                f"{param.value.shape}")
        param.value[...] = value.astype(param.value.dtype)
    return manifest
