"""Flat little-endian checkpoint container of named, shape-tagged arrays.

Layout (see docs/checkpoint_format.md)::

    magic  b"TONESPL\\0"   8 bytes
    version  uint32        4 bytes
    count    uint32        4 bytes (number of arrays)
    count x { name_len uint16, name utf-8, dtype uint8, ndim uint8,
              shape uint64 x ndim, data (row-major, little-endian) }
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"TONESPL\x00"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i8"), 2: np.dtype("u1")}
_CODES = {np.dtype("float64"): 0, np.dtype("int64"): 1, np.dtype("uint8"): 2}


class CheckpointError(ValueError):
    pass


def write_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    """Write arrays in the dict's iteration order."""
    chunks = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype.kind == "f":
            arr = arr.astype("<f8")
        elif arr.dtype.kind in "iub" and arr.dtype != np.uint8:
            arr = arr.astype("<i8")
        code = _CODES[np.dtype(arr.dtype.newbyteorder("="))]
        raw = name.encode()
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<BB", code, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)


def read_arrays(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    pos = 16
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + nlen].decode()
            pos += nlen
            code, ndim = struct.unpack_from("<BB", data, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}Q", data, pos)
            pos += 8 * ndim
            dt = _DTYPES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if pos + nbytes > len(data):
                raise CheckpointError(f"{path}: truncated array {name!r}")
            out[name] = np.frombuffer(data, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(shape).copy()
            pos += nbytes
    except (struct.error, KeyError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc
    return out
