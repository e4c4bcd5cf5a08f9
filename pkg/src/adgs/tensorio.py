"""Raw tensor files (``.ten``) used for cue maps and point exports.

Layout: magic ``TEN1``, u32 ndim, u32 dims[ndim], little-endian f32 payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"TEN1"


class TensorFormatError(ValueError):
    pass


def encode_tensor(array) -> bytes:
    arr = np.ascontiguousarray(array, dtype="<f4")
    head = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise TensorFormatError("not a TEN1 tensor")
    (ndim,) = struct.unpack_from("<I", buf, 4)
    off = 8 + 4 * ndim
    if len(buf) < off:
        raise TensorFormatError("truncated header")
    dims = struct.unpack_from(f"<{ndim}I", buf, 8)
    n = int(np.prod(dims, dtype=np.int64))
    if len(buf) != off + 4 * n:
        raise TensorFormatError(f"payload size mismatch: expected {4 * n} bytes, got {len(buf) - off}")
    return np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(dims).astype(np.float32)


def write_tensor(path, array) -> None:
    Path(path).write_bytes(encode_tensor(array))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())
