"""Flat binary parameter checkpoints.

Layout: magic "CSPL1", then one record per tensor in write order:
name length (u32 LE), name bytes (UTF-8), rank (u32 LE), dims (u32 LE each),
then the row-major float64 payload, little-endian. Round-trips bit-exactly.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .errors import FormatError

MAGIC = b"CSPL1"


def save_checkpoint(path, params: dict[str, Tensor]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name, tens in params.items():
            arr = np.ascontiguousarray(tens.data, dtype="<f8")
            raw_name = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw_name)))
            fh.write(raw_name)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:5] != MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {blob[:5]!r}")
    pos = 5
    out: dict[str, np.ndarray] = {}

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise FormatError(f"{path}: truncated checkpoint")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    while pos < len(blob):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        count = 1
        for d in dims:
            count *= d
        arr = np.frombuffer(take(8 * count), dtype="<f8").reshape(dims)
        out[name] = arr.astype(np.float64)
    return out
