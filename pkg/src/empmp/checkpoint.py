"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"EMPM"                      magic
    u32 version                  currently 1
    u32 n, n bytes               model config as UTF-8 JSON (sorted keys)
    u32 n, n bytes               run metadata as UTF-8 JSON (epoch, optimizer scalars, ...)
    u32 count                    number of tensor records
    count x record:
        u16 n, n bytes           tensor name (UTF-8)
        u8 ndim, ndim x u32      shape
        u32 crc32                CRC32 of the payload bytes
        payload                  float64 values, row-major

Model parameters come first, in enumeration order; optimizer moments follow
as ``adam.m/<name>`` and ``adam.v/<name>``.
"""

from __future__ import annotations

import io
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError
from .model import EmpmpModel, ModelConfig

MAGIC = b"EMPM"
VERSION = 1


@dataclass
class Checkpoint:
    model: EmpmpModel
    meta: dict = field(default_factory=dict)
    extra: dict[str, np.ndarray] = field(default_factory=dict)


def _write_blob(fh, data: bytes, fmt: str = "<I") -> None:
    fh.write(struct.pack(fmt, len(data)))
    fh.write(data)


def dumps(model: EmpmpModel, meta: dict | None = None, extra: dict[str, np.ndarray] | None = None) -> bytes:
    fh = io.BytesIO()
    fh.write(MAGIC)
    fh.write(struct.pack("<I", VERSION))
    _write_blob(fh, json.dumps(model.config.to_dict(), sort_keys=True).encode())
    _write_blob(fh, json.dumps(meta or {}, sort_keys=True).encode())
    records = [(name, t.data) for name, t in model.named_parameters()]
    records += list((extra or {}).items())
    fh.write(struct.pack("<I", len(records)))
    for name, arr in records:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        _write_blob(fh, name.encode(), "<H")
        fh.write(struct.pack("<B", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        payload = arr.tobytes()
        fh.write(struct.pack("<I", zlib.crc32(payload)))
        fh.write(payload)
    return fh.getvalue()


class _Reader:
    def __init__(self, buf: bytes, source):
        self.buf, self.pos, self.source = buf, 0, source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ParseError(f"{self.source}: truncated at byte offset {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(buf: bytes, source: str = "<bytes>") -> Checkpoint:
    r = _Reader(buf, source)
    if r.take(4) != MAGIC:
        raise ParseError(f"{source}: byte offset 0: not an EMPM checkpoint")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise ParseError(f"{source}: unsupported checkpoint version {version}")
    (n,) = r.unpack("<I")
    config = ModelConfig.from_dict(json.loads(r.take(n)))
    (n,) = r.unpack("<I")
    meta = json.loads(r.take(n))
    (count,) = r.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = r.unpack("<H")
        name = r.take(n).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        (crc,) = r.unpack("<I")
        offset = r.pos
        payload = r.take(8 * int(np.prod(shape, dtype=np.int64)))
        if zlib.crc32(payload) != crc:
            raise ParseError(f"{source}: byte offset {offset}: CRC mismatch for tensor {name!r}")
        tensors[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(buf):
        raise ParseError(f"{source}: {len(buf) - r.pos} trailing bytes after last tensor")

    model = EmpmpModel(config)
    own = [name for name, _ in model.named_parameters()]
    model.load_state_dict({k: tensors.pop(k) for k in own if k in tensors})
    return Checkpoint(model, meta, tensors)


def save_checkpoint(path, model: EmpmpModel, meta: dict | None = None,
                    extra: dict[str, np.ndarray] | None = None) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(model, meta, extra))
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    return loads(path.read_bytes(), str(path))
