"""Binary checkpoint format.

Layout (little-endian): magic ``DGCK``, u32 version, u32 length + UTF-8 JSON
config, u32 blob count, then per blob: u32 name length, UTF-8 name, u32 rows,
u32 cols, rows*cols float32 values.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from ..exceptions import FormatError

MAGIC = b"DGCK"
VERSION = 1


@dataclass
class ModelCheckpoint:
    config: dict
    params: Dict[str, np.ndarray]
    best: dict = field(default_factory=dict)

    def save(self, path) -> None:
        save_checkpoint(path, self)

    @classmethod
    def load(cls, path) -> "ModelCheckpoint":
        return load_checkpoint(path)


def save_checkpoint(path, ckpt: ModelCheckpoint) -> None:
    header = json.dumps({"config": ckpt.config, "best": ckpt.best}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(header)), header,
             struct.pack("<I", len(ckpt.params))]
    for name, arr in ckpt.params.items():
        arr = np.asarray(arr, dtype="<f4")
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        encoded = name.encode()
        parts += [struct.pack("<I", len(encoded)), encoded, struct.pack("<II", *arr.shape),
                  np.ascontiguousarray(arr).tobytes()]
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path) -> ModelCheckpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (magic {raw[:4]!r})")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<I", raw, 8)
    header = json.loads(raw[12:12 + hlen].decode())
    off = 12 + hlen
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off:off + nlen].decode()
        off += nlen
        rows, cols = struct.unpack_from("<II", raw, off)
        off += 8
        size = rows * cols * 4
        if off + size > len(raw):
            raise FormatError(f"{path}: truncated blob {name!r}")
        params[name] = np.frombuffer(raw, dtype="<f4", count=rows * cols, offset=off).reshape(rows, cols).astype(np.float32)
        off += size
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes")
    return ModelCheckpoint(header["config"], params, header.get("best", {}))
