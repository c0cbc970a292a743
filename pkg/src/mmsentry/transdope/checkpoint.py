"""Flat binary model checkpoints.

Layout: magic "TDOP", u32 version, ten u16 architecture fields, then every
trainable tensor as little-endian float32 in declaration order.  Shapes are
implied by the architecture fields, so the loader can reject a file whose
size disagrees with its own header.  The positional table is a pure function
of the architecture and is recomputed, never stored.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .model import TransDopeConfig, TransDopeModel, param_spec

MAGIC = b"TDOP"
VERSION = 1

_VERSION_STRUCT = struct.Struct("<I")
_CONFIG_STRUCT = struct.Struct("<10H")
_CONFIG_FIELDS = (
    "seq_len",
    "range_bins",
    "doppler_bins",
    "channels",
    "conv_filters",
    "conv_kernel",
    "embed_dim",
    "heads",
    "encoder_layers",
    "ffn_conv_kernel",
)


class CheckpointError(RuntimeError):
    """Unreadable, unsupported, or internally inconsistent checkpoint file."""


def save_model(model: TransDopeModel, path: str | Path) -> Path:
    path = Path(path)
    cfg = model.config
    parts = [MAGIC, _VERSION_STRUCT.pack(VERSION)]
    parts.append(_CONFIG_STRUCT.pack(*(getattr(cfg, f) for f in _CONFIG_FIELDS)))
    for name, shape, _ in param_spec(cfg):
        tensor = model.params[name]
        if tensor.shape != shape:
            raise CheckpointError(f"parameter {name} has shape {tensor.shape}, expected {shape}")
        parts.append(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
    path.write_bytes(b"".join(parts))
    return path


def load_model(path: str | Path) -> TransDopeModel:
    raw = Path(path).read_bytes()
    header = len(MAGIC) + _VERSION_STRUCT.size + _CONFIG_STRUCT.size
    if len(raw) < header:
        raise CheckpointError(f"file too short for a checkpoint header ({len(raw)} bytes)")
    if raw[:4] != MAGIC:
        raise CheckpointError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}")
    (version,) = _VERSION_STRUCT.unpack_from(raw, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    fields = _CONFIG_STRUCT.unpack_from(raw, 8)
    try:
        config = TransDopeConfig(**dict(zip(_CONFIG_FIELDS, fields)))
    except ValueError as exc:
        raise CheckpointError(f"invalid architecture fields: {exc}") from None

    params: dict[str, np.ndarray] = {}
    offset = header
    for name, shape, _ in param_spec(config):
        size = int(np.prod(shape)) * 4
        if offset + size > len(raw):
            raise CheckpointError(f"truncated tensor data at parameter {name}")
        flat = np.frombuffer(raw, dtype="<f4", count=int(np.prod(shape)), offset=offset)
        params[name] = flat.reshape(shape).astype(np.float64)
        offset += size
    if offset != len(raw):
        raise CheckpointError(f"{len(raw) - offset} trailing bytes after final tensor")
    return TransDopeModel(config=config, params=params)
