"""The ``.mvol`` single-volume format.

Layout (little-endian)::

    "MVOL" | u8 version | u8 kind (0 intensity, 1 label) | u8 dtype tag
    u32 x3 extents (x, y, z) | f32 x3 spacing (x, y, z) | raw voxels, x fastest
    u32 CRC-32 of every preceding byte

The modality is not part of the header; callers pass it to :func:`read_mvol`.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path
from typing import Any

import numpy as np

from micformer.contracts.error import DataError, InvariantError
from micformer.data.volumes import LabelMap, Modality, Volume

from .atomic import atomic_write_bytes

MAGIC = b"MVOL"
VERSION = 1
KIND_INTENSITY = 0
KIND_LABEL = 1
HEADER_FMT = "<4s B B B 3I 3f"
HEADER_SIZE = struct.calcsize(HEADER_FMT)
CRC_SIZE = 4
MAX_PAYLOAD_BYTES = 2 * 1024 * 1024 * 1024

DTYPE_TAGS: dict[int, np.dtype[Any]] = {
    1: np.dtype("<f4"),
    2: np.dtype("<f8"),
    3: np.dtype("u1"),
}
_KIND_DTYPES = {KIND_INTENSITY: (1, 2), KIND_LABEL: (3,)}


def dumps_mvol(obj: Volume | LabelMap) -> bytes:
    if isinstance(obj, Volume):
        kind, tag = KIND_INTENSITY, 1
    elif isinstance(obj, LabelMap):
        kind, tag = KIND_LABEL, 3
    else:
        raise InvariantError(f"cannot encode {type(obj).__name__} as .mvol")
    d, h, w = obj.extents
    sz, sy, sx = obj.spacing
    header = struct.pack(HEADER_FMT, MAGIC, VERSION, kind, tag, w, h, d, sx, sy, sz)
    payload = np.ascontiguousarray(obj.data, dtype=DTYPE_TAGS[tag]).tobytes(order="C")
    body = header + payload
    return body + struct.pack("<I", zlib.crc32(body))


def loads_mvol(blob: bytes, modality: Modality | str = Modality.OTHER) -> Volume | LabelMap:
    if len(blob) < HEADER_SIZE:
        raise DataError("Truncated .mvol: shorter than its header")
    magic, version, kind, tag, w, h, d, sx, sy, sz = struct.unpack(HEADER_FMT, blob[:HEADER_SIZE])
    if magic != MAGIC:
        raise DataError(f"Bad magic {magic!r}; not an .mvol file")
    if version != VERSION:
        raise DataError(f"Unsupported .mvol version {version}")
    if kind not in _KIND_DTYPES:
        raise DataError(f"Unknown .mvol kind {kind}")
    if tag not in _KIND_DTYPES[kind]:
        raise DataError(f"dtype tag {tag} is not valid for kind {kind}")
    dtype = DTYPE_TAGS[tag]
    if min(w, h, d) < 1:
        raise DataError(f"Extent overflow: zero extent in {(w, h, d)}")
    payload_len = w * h * d * dtype.itemsize
    if payload_len > MAX_PAYLOAD_BYTES:
        raise DataError(f"Extent overflow: {(w, h, d)} voxels exceed the payload limit")
    expected = HEADER_SIZE + payload_len + CRC_SIZE
    if len(blob) < expected:
        raise DataError(
            f"Truncated .mvol: header declares {w * h * d} voxels, "
            f"file holds {max(len(blob) - HEADER_SIZE - CRC_SIZE, 0) // dtype.itemsize}"
        )
    if len(blob) > expected:
        raise DataError(f"{len(blob) - expected} trailing bytes after the .mvol checksum")
    body_end = HEADER_SIZE + payload_len
    (stored_crc,) = struct.unpack("<I", blob[body_end:])
    if zlib.crc32(blob[:body_end]) != stored_crc:
        raise DataError("Checksum mismatch: .mvol file is corrupted")
    arr = np.frombuffer(blob, dtype=dtype, count=w * h * d, offset=HEADER_SIZE).reshape(d, h, w)
    spacing = (float(sz), float(sy), float(sx))
    if kind == KIND_LABEL:
        return LabelMap(arr, spacing)
    return Volume(arr, spacing, Modality(modality))


def write_mvol(obj: Volume | LabelMap, path: str | Path) -> Path:
    return atomic_write_bytes(path, dumps_mvol(obj))


def read_mvol(path: str | Path, modality: Modality | str = Modality.OTHER) -> Volume | LabelMap:
    return loads_mvol(Path(path).read_bytes(), modality)


__all__ = [
    "KIND_INTENSITY",
    "KIND_LABEL",
    "MAGIC",
    "VERSION",
    "dumps_mvol",
    "loads_mvol",
    "read_mvol",
    "write_mvol",
]
