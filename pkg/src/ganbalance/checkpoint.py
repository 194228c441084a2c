"""GBCK binary checkpoint format.

Layout, all integers little-endian unsigned 32-bit:

    magic "GBCK" | version | tensor count |
    per tensor: name length | UTF-8 name | rank | extents... | float32 LE data

Tensor order is preserved, and a save/load/save round trip is bit-identical.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path
from typing import Mapping

import numpy as np

from .tensor import Tensor

MAGIC = b"GBCK"
VERSION = 1


class CheckpointFormatError(ValueError):
    """The file is not a well-formed GBCK checkpoint."""


def save_checkpoint(path, tensors: Mapping[str, "Tensor | np.ndarray"],
                    version: int = VERSION) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", version, len(tensors)))
        for name, t in tensors.items():
            arr = t.data if isinstance(t, Tensor) else np.asarray(t)
            arr = np.ascontiguousarray(arr, dtype="<f4")
            name_b = name.encode("utf-8")
            f.write(struct.pack("<I", len(name_b)))
            f.write(name_b)
            f.write(struct.pack("<I", arr.ndim))
            for extent in arr.shape:
                f.write(struct.pack("<I", extent))
            f.write(arr.tobytes())


def load_checkpoint(path) -> "OrderedDict[str, np.ndarray]":
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointFormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    off = 4

    def u32():
        nonlocal off
        if off + 4 > len(data):
            raise CheckpointFormatError("truncated checkpoint")
        (v,) = struct.unpack_from("<I", data, off)
        off += 4
        return v

    version = u32()
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported version {version}")
    count = u32()
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        name_len = u32()
        name = data[off:off + name_len].decode("utf-8")
        off += name_len
        rank = u32()
        shape = tuple(u32() for _ in range(rank))
        nbytes = 4 * int(np.prod(shape, dtype=np.int64)) if rank else 4
        if off + nbytes > len(data):
            raise CheckpointFormatError(f"truncated tensor data for {name!r}")
        arr = np.frombuffer(data[off:off + nbytes], dtype="<f4").reshape(shape)
        off += nbytes
        out[name] = arr.astype(np.float32)  # native-order writable copy
    if off != len(data):
        raise CheckpointFormatError(f"{len(data) - off} trailing bytes")
    return out
