"""Binary checkpoint container: named arrays plus one JSON state section.

Layout (little-endian): magic ``ADGS``, u32 version, u32 section count,
then per section u16 name length, name (utf-8), u8 dtype code, u8 ndim,
u32 dims[ndim], raw payload; a trailing u32 CRC-32 covers every byte before it.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"ADGS"
VERSION = 1
DTYPES = {0: "<f4", 1: "<f8", 2: "<i8", 3: "|u1", 4: "<i4"}
CODES = {np.dtype(v): k for k, v in DTYPES.items()}
STATE_SECTION = "__state__"


class CorruptFile(ValueError):
    pass


class VersionMismatch(ValueError):
    pass


def encode(arrays: dict, state: dict) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(arrays) + 1)]
    blob = json.dumps(state, sort_keys=True, separators=(",", ":")).encode()
    items = list(arrays.items()) + [(STATE_SECTION, np.frombuffer(blob, dtype=np.uint8))]
    for name, arr in items:
        arr = np.asarray(arr)
        if arr.dtype not in CODES:
            raise TypeError(f"section {name!r}: unsupported dtype {arr.dtype}")
        key = name.encode()
        parts.append(struct.pack("<H", len(key)) + key)
        parts.append(struct.pack("<BB", CODES[arr.dtype], arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=DTYPES[CODES[arr.dtype]]).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode(buf: bytes):
    """Returns (arrays, state)."""
    if len(buf) < 16 or buf[:4] != MAGIC:
        raise CorruptFile("bad magic, not a checkpoint")
    (crc,) = struct.unpack_from("<I", buf, len(buf) - 4)
    if zlib.crc32(buf[:-4]) != crc:
        raise CorruptFile("checksum mismatch")
    version, n = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise VersionMismatch(f"checkpoint version {version}, this build reads {VERSION}")
    off = 12
    arrays = {}
    try:
        for _ in range(n):
            (klen,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off:off + klen].decode()
            off += klen
            code, ndim = struct.unpack_from("<BB", buf, off)
            off += 2
            dims = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
            dt = np.dtype(DTYPES[code])
            size = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
            arrays[name] = np.frombuffer(buf[off:off + size], dtype=dt).reshape(dims).copy()
            off += size
    except (struct.error, KeyError, ValueError) as exc:
        raise CorruptFile(f"malformed section table: {exc}") from None
    if off != len(buf) - 4 or STATE_SECTION not in arrays:
        raise CorruptFile("trailing bytes or missing state section")
    state = json.loads(arrays.pop(STATE_SECTION).tobytes().decode())
    return arrays, state


def save(path, arrays: dict, state: dict) -> None:
    Path(path).write_bytes(encode(arrays, state))


def load(path):
    return decode(Path(path).read_bytes())


CLOUD_MAGIC = b"ADGS"
CLOUD_VERSION = 1


def encode_cloud(cloud) -> bytes:
    """A bare cloud: magic, u32 version, u32 count, u32 embed dim, then each
    float attribute as little-endian f32 in declared order and the ids as i64."""
    from .scene import FLOAT_ATTRS
    parts = [CLOUD_MAGIC, struct.pack("<III", CLOUD_VERSION, cloud.count, cloud.embed_dim)]
    parts += [np.ascontiguousarray(getattr(cloud, k), dtype="<f4").tobytes() for k in FLOAT_ATTRS]
    parts.append(np.ascontiguousarray(cloud.ids, dtype="<i8").tobytes())
    return b"".join(parts)


def decode_cloud(buf: bytes):
    from .scene import FLOAT_ATTRS, GaussianCloud
    from .sh import N_COEFFS
    if len(buf) < 16 or buf[:4] != CLOUD_MAGIC:
        raise CorruptFile("bad magic, not a cloud file")
    version, n, d = struct.unpack_from("<III", buf, 4)
    if version != CLOUD_VERSION:
        raise VersionMismatch(f"cloud version {version}, this build reads {CLOUD_VERSION}")
    shapes = {"position": (n, 3), "log_scale": (n, 3), "rotation": (n, 4), "opacity_logit": (n,),
              "sh_coeffs": (n, N_COEFFS, 3), "appearance_embed": (n, d), "sampling_rate": (n,)}
    off = 16
    kw = {}
    for k in FLOAT_ATTRS:
        size = int(np.prod(shapes[k])) * 4
        if off + size > len(buf):
            raise CorruptFile(f"truncated in {k}")
        kw[k] = np.frombuffer(buf[off:off + size], dtype="<f4").reshape(shapes[k]).astype(np.float32)
        off += size
    if off + 8 * n != len(buf):
        raise CorruptFile("id section has the wrong length")
    ids = np.frombuffer(buf[off:], dtype="<i8").astype(np.int64)
    return GaussianCloud(**kw, ids=ids, next_id=int(ids.max()) + 1 if n else 0)


def save_cloud(path, cloud) -> None:
    Path(path).write_bytes(encode_cloud(cloud))


def load_cloud(path):
    return decode_cloud(Path(path).read_bytes())
