"""Versioned binary checkpoint container.

Layout::

    b"KSCK"                 magic
    u32 LE                  format version
    u32 LE                  header length H
    H bytes                 UTF-8 JSON header (config, config hash, tensor table,
                            sha256 of the payload)
    payload                 every tensor as little-endian float64, in table order
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .nn import ModelConfig, ModelParams, buffer_shapes, param_shapes

MAGIC = b"KSCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


class CheckpointMismatch(CheckpointError):
    """The checkpoint was written for a different model configuration."""


def save_checkpoint(path, params: ModelParams, extra: dict | None = None) -> None:
    tensors = params.tensors()
    table, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    payload = b"".join(chunks)
    header = {
        "config": params.config.to_dict(),
        "config_hash": params.config.config_hash(),
        "tensors": table,
        "sha256": hashlib.sha256(payload).hexdigest(),
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, len(blob)) + blob + payload)


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) < 12 or head[:4] != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint")
        version, hlen = struct.unpack("<II", head[4:])
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        return json.loads(fh.read(hlen))


def load_checkpoint(path, expect: ModelConfig | None = None) -> ModelParams:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(raw[12:12 + hlen])
    payload = raw[12 + hlen:]
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise CheckpointError("checkpoint payload checksum mismatch")
    config = ModelConfig(**header["config"])
    if config.config_hash() != header["config_hash"]:
        raise CheckpointError("stored config hash does not match stored config")
    if expect is not None and expect.config_hash() != header["config_hash"]:
        raise CheckpointMismatch(
            f"checkpoint config {header['config_hash']} != requested {expect.config_hash()}")

    tensors = {}
    for entry in header["tensors"]:
        a, n = entry["offset"], entry["nbytes"]
        tensors[entry["name"]] = np.frombuffer(payload[a:a + n], dtype="<f8").reshape(entry["shape"]).copy()
    weights, buffers = {}, {}
    for name, shape in param_shapes(config).items():
        weights[name] = _take(tensors, name, shape)
    for name, shape in buffer_shapes(config).items():
        buffers[name] = _take(tensors, name, shape)
    return ModelParams(config, weights, buffers)


def _take(tensors, name, shape):
    if name not in tensors:
        raise CheckpointError(f"missing tensor {name}")
    if tensors[name].shape != tuple(shape):
        raise CheckpointError(f"{name} has shape {tensors[name].shape}, expected {shape}")
    return tensors[name].astype(np.float64)
