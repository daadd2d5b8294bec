"""Binary checkpoint format for model parameters.

Layout (all integers little-endian uint32, all floats little-endian
float64):

    magic   4 bytes  b"SCLD"
    version u32      currently 1
    role    u32 length + utf-8 bytes
    phase   u32 length + utf-8 bytes
    count   u32      number of tensors
    per tensor:
        name  u32 length + utf-8 bytes
        ndim  u32
        dims  ndim x u32
        data  prod(dims) x f64

Tensors are written in dictionary insertion order, so identical models
serialize to identical bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .networks import ModelParams

MAGIC = b"SCLD"
VERSION = 1


class CheckpointError(ValueError):
    """Raised for malformed or truncated checkpoint files."""


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def serialize(model: ModelParams) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    parts.append(_pack_str(model.role))
    parts.append(_pack_str(model.phase))
    parts.append(struct.pack("<I", len(model.tensors)))
    for name, tensor in model.tensors.items():
        parts.append(_pack_str(name))
        dims = tensor.data.shape
        parts.append(struct.pack("<I", len(dims)))
        parts.append(struct.pack(f"<{len(dims)}I", *dims))
        parts.append(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(
                f"truncated checkpoint: wanted {n} bytes at offset {self.pos}, "
                f"file has {len(self.data)}"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def deserialize(data: bytes) -> ModelParams:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad checkpoint magic, not a model checkpoint")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    role = r.string()
    phase = r.string()
    count = r.u32()
    tensors: dict[str, ad.Tensor] = {}
    for _ in range(count):
        name = r.string()
        if name in tensors:
            raise CheckpointError(f"duplicate tensor name '{name}' in checkpoint")
        ndim = r.u32()
        dims = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        n_values = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        raw = r.take(8 * n_values)
        arr = np.frombuffer(raw, dtype="<f8").reshape(dims).astype(np.float64)
        tensors[name] = ad.parameter(arr)
    if r.pos != len(data):
        raise CheckpointError(
            f"checkpoint has {len(data) - r.pos} trailing bytes after the last tensor"
        )
    try:
        return ModelParams(role, phase, tensors)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from None


def save_checkpoint(model: ModelParams, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(serialize(model))


def load_checkpoint(path: Path) -> ModelParams:
    return deserialize(Path(path).read_bytes())
