"""Flat binary model snapshots.

Layout, all integers little-endian uint32::

    magic   b"FSNP"
    version 1
    n       number of layer sizes
    sizes   n integers (input width, hidden widths, class count)
    body    float64 little-endian; per layer the weight matrix
            (out x in, row-major) followed by its bias vector

The body is exactly ``ModelParams.to_vector()``.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ParseError
from .nn import ModelParams

MAGIC = b"FSNP"
VERSION = 1


def encode(model: ModelParams) -> bytes:
    sizes = model.layer_sizes
    head = MAGIC + struct.pack(f"<II{len(sizes)}I", VERSION, len(sizes), *sizes)
    return head + model.to_vector().astype("<f8").tobytes()


def decode(blob: bytes) -> ModelParams:
    if blob[:4] != MAGIC:
        raise ParseError("not a model snapshot (bad magic)")
    if len(blob) < 12:
        raise ParseError("truncated snapshot header")
    version, n = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise ParseError(f"unsupported snapshot version {version}")
    body_at = 12 + 4 * n
    if n < 2 or len(blob) < body_at:
        raise ParseError("truncated snapshot header")
    sizes = list(struct.unpack_from(f"<{n}I", blob, 12))
    expected = sum(o * i + o for i, o in zip(sizes[:-1], sizes[1:]))
    body = blob[body_at:]
    if len(body) != 8 * expected:
        raise ParseError(f"snapshot body has {len(body)} bytes, expected {8 * expected}")
    vec = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return ModelParams.from_vector(vec, sizes)


def save(model: ModelParams, path: str | Path) -> None:
    Path(path).write_bytes(encode(model))


def load(path: str | Path) -> ModelParams:
    return decode(Path(path).read_bytes())
