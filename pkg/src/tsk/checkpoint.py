"""Versioned binary model checkpoints (``.tskm``).

Layout, all integers little-endian u32::

    magic        b"TSKM"
    version      1
    config_len   then config_len bytes of UTF-8 JSON (the HeadConfig, sorted keys)
    n_params     then, per parameter in the head's canonical order:
        name_len, name bytes, rank, rank dims, prod(dims) f64 values row-major
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .heads import HeadConfig, Model
from .tensor import Tensor

MAGIC = b"TSKM"
VERSION = 1
_U32 = struct.Struct("<I")


class CheckpointError(ValueError):
    pass


class _Reader:
    def __init__(self, buf: bytes, source: str):
        self.buf, self.pos, self.source = buf, 0, source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"{self.source}: truncated at byte {self.pos} (needed {n} more)")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def encode_checkpoint(model: Model) -> bytes:
    cfg = json.dumps(model.config.to_dict(), sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, _U32.pack(VERSION), _U32.pack(len(cfg)), cfg, _U32.pack(len(model.parameters))]
    for name, p in model.parameters.items():
        raw = name.encode()
        parts += [_U32.pack(len(raw)), raw, _U32.pack(p.ndim)]
        parts += [_U32.pack(n) for n in p.shape]
        parts.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_checkpoint(buf: bytes, source: str = "checkpoint") -> Model:
    r = _Reader(buf, source)
    magic = r.take(4)
    if magic != MAGIC:
        raise CheckpointError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {version}")
    try:
        config = HeadConfig.from_dict(json.loads(r.take(r.u32()).decode()))
    except (UnicodeDecodeError, json.JSONDecodeError, TypeError) as e:
        raise CheckpointError(f"{source}: unreadable head config ({e})") from None
    params = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode()
        shape = tuple(r.u32() for _ in range(r.u32()))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
        params[name] = Tensor(data, requires_grad=True)
    if r.pos != len(buf):
        raise CheckpointError(f"{source}: {len(buf) - r.pos} trailing bytes")
    return Model(config, params)


def save_checkpoint(model: Model, path) -> None:
    Path(path).write_bytes(encode_checkpoint(model))


def load_checkpoint(path) -> Model:
    path = Path(path)
    return decode_checkpoint(path.read_bytes(), str(path))
