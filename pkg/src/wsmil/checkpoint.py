"""WSCK binary checkpoints: a named list of float64 arrays.

Layout (little endian)::

    b"WSCK" | u32 version | u32 count
    count x ( u32 name_len | name (utf-8) | u32 rank | rank x u32 dim | f64 data, row-major )
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, UnsupportedFormatError

MAGIC = b"WSCK"
VERSION = 1


def save_arrays(path, arrays: dict) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_arrays(path) -> dict:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: not a WSCK checkpoint")
    try:
        version, count = struct.unpack_from("<II", raw, 4)
        if version != VERSION:
            raise UnsupportedFormatError(f"{path}: WSCK version {version} not supported")
        pos = 12
        out = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            name = raw[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", raw, pos)
            pos += 4 * rank
            size = int(np.prod(dims, dtype=np.int64))
            if pos + 8 * size > len(raw):
                raise FormatError(f"{path}: truncated data for {name!r}")
            out[name] = np.frombuffer(raw, dtype="<f8", count=size, offset=pos).reshape(dims).copy()
            pos += 8 * size
    except struct.error as exc:
        raise FormatError(f"{path}: truncated checkpoint ({exc})") from exc
    if pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - pos} trailing bytes")
    return out
