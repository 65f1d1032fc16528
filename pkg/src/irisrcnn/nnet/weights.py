"""DCSW weight files.

Layout (all integers little-endian u32)::

    b"DCSW" | version | tensor count
    per tensor: name length | utf-8 name | rank | dims... | float64 LE values
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"DCSW"
VERSION = 1


class WeightFormatError(ValueError):
    """Raised for truncated, corrupt, or incompatible weight files."""


def dumps(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, value in tensors.items():
        arr = np.asarray(value, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def loads(buf: bytes) -> dict[str, np.ndarray]:
    view = memoryview(buf)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise WeightFormatError("weight file is truncated")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise WeightFormatError("not a DCSW weight file (bad magic)")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise WeightFormatError(f"unsupported DCSW version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        try:
            name = bytes(take(name_len)).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise WeightFormatError("tensor name is not valid utf-8") from exc
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(dims)) if rank else 1
        values = np.frombuffer(take(8 * size), dtype="<f8").astype(np.float64)
        if name in out:
            raise WeightFormatError(f"duplicate tensor {name!r}")
        out[name] = values.reshape(dims)
    if pos != len(view):
        raise WeightFormatError("trailing bytes after the last tensor")
    return out


def save_weights(path, tensors: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(tensors))


def load_weights(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
