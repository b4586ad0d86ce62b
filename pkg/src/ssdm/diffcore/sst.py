"""SST1 tensor container.

Layout: magic ``b"SST1"``, one byte dtype code, one byte ndim, ``ndim``
little-endian u32 dims, then the little-endian row-major payload.
"""
from __future__ import annotations

import os
import struct

import numpy as np

from ssdm.errors import ValidationError

MAGIC = b"SST1"
DTYPE_CODES = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
    2: np.dtype("u1"),
    3: np.dtype("<i4"),
}
_CODE_OF = {(v.kind, v.itemsize): k for k, v in DTYPE_CODES.items()}


def encode(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    code = _CODE_OF.get((arr.dtype.kind, arr.dtype.itemsize))
    if code is None:
        raise ValidationError(f"SST1 cannot store dtype {arr.dtype}")
    if arr.ndim > 255:
        raise ValidationError("SST1 supports at most 255 dimensions")
    header = MAGIC + bytes([code, arr.ndim]) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=DTYPE_CODES[code]).tobytes(order="C")
    return header + payload


def decode(buf: bytes) -> np.ndarray:
    if len(buf) < 6 or buf[:4] != MAGIC:
        raise ValidationError("not an SST1 container (bad magic)")
    code, ndim = buf[4], buf[5]
    if code not in DTYPE_CODES:
        raise ValidationError(f"unknown SST1 dtype code {code}")
    end = 6 + 4 * ndim
    if len(buf) < end:
        raise ValidationError("truncated SST1 header")
    dims = struct.unpack(f"<{ndim}I", buf[6:end])
    dt = DTYPE_CODES[code]
    n = int(np.prod(dims, dtype=np.int64))
    if len(buf) - end != n * dt.itemsize:
        raise ValidationError(
            f"SST1 payload has {len(buf) - end} bytes, expected {n * dt.itemsize} for shape {dims}"
        )
    return np.frombuffer(buf, dtype=dt, offset=end, count=n).reshape(dims).astype(dt.newbyteorder("="))


def save(path: str | os.PathLike, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(arr))


def load(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode(fh.read())
