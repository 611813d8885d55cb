"""Versioned parameter archive with CRC-32 protection.

Layout (all integers little-endian)::

    "MICF" | u16 version | u32 meta_len | meta JSON (config echo + run meta)
    u32 tensor_count
    per tensor: u16 name_len | name | u8 dtype tag | u8 rank | rank x u32 extents | raw values
    u32 CRC-32 of every preceding byte

Optimizer moments are stored as ordinary tensors named ``optim.m.<param>`` and
``optim.v.<param>`` after the parameters.
"""

from __future__ import annotations

import json
import logging
import struct
import zlib
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from micformer.contracts.error import DataError, InvariantError
from micformer.core.tensor import Tensor
from micformer.model.params import ParameterStore

from .atomic import atomic_write_bytes

logger = logging.getLogger("micformer")

MAGIC = b"MICF"
VERSION = 1
HEADER_FMT = "<4s H I"  # magic, version, meta length
HEADER_SIZE = struct.calcsize(HEADER_FMT)
CRC_FMT = "<I"
CRC_SIZE = struct.calcsize(CRC_FMT)
MAX_RANK = 8
OPTIM_M = "optim.m."
OPTIM_V = "optim.v."

DTYPE_TAGS: dict[int, np.dtype[Any]] = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_TAG_FOR: dict[str, int] = {"float32": 1, "float64": 2}


@dataclass(frozen=True)
class Checkpoint:
    params: ParameterStore
    config: dict[str, Any] = field(default_factory=dict)
    meta: dict[str, Any] = field(default_factory=dict)
    optim_m: ParameterStore = field(default_factory=ParameterStore)
    optim_v: ParameterStore = field(default_factory=ParameterStore)


def _pack_tensor(name: str, tensor: Tensor) -> bytes:
    encoded = name.encode("utf-8")
    tag = _TAG_FOR.get(tensor.dtype.name)
    if tag is None:
        raise InvariantError(f"cannot archive tensor {name} of dtype {tensor.dtype}")
    shape = tensor.shape
    if len(shape) > MAX_RANK:
        raise InvariantError(f"tensor {name} has rank {len(shape)} > {MAX_RANK}")
    raw = np.ascontiguousarray(tensor.data, dtype=DTYPE_TAGS[tag]).tobytes(order="C")
    return b"".join(
        [
            struct.pack("<H", len(encoded)),
            encoded,
            struct.pack("<BB", tag, len(shape)),
            struct.pack(f"<{len(shape)}I", *shape),
            raw,
        ]
    )


def dumps_checkpoint(ckpt: Checkpoint) -> bytes:
    """Serialize to bytes; parameters first, then optimizer moments."""

    for name in ckpt.params:
        if name.startswith("optim."):
            raise InvariantError(f"parameter name {name!r} collides with optimizer moments")
    meta = json.dumps(
        {"config": ckpt.config, "meta": ckpt.meta}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    entries: list[tuple[str, Tensor]] = list(ckpt.params.items())
    entries += [(OPTIM_M + n, t) for n, t in ckpt.optim_m.items()]
    entries += [(OPTIM_V + n, t) for n, t in ckpt.optim_v.items()]
    parts = [struct.pack(HEADER_FMT, MAGIC, VERSION, len(meta)), meta]
    parts.append(struct.pack("<I", len(entries)))
    parts.extend(_pack_tensor(name, t) for name, t in entries)
    body = b"".join(parts)
    return body + struct.pack(CRC_FMT, zlib.crc32(body))


class _Reader:
    def __init__(self, blob: bytes, end: int) -> None:
        self.blob = blob
        self.end = end
        self.pos = 0

    def take(self, size: int, what: str) -> bytes:
        if size < 0 or self.pos + size > self.end:
            raise DataError(f"Truncated checkpoint while reading {what}")
        chunk = self.blob[self.pos : self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt: str, what: str) -> tuple[Any, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def _check_header(blob: bytes) -> int:
    if len(blob) < HEADER_SIZE + CRC_SIZE:
        raise DataError("Truncated checkpoint: shorter than its header")
    magic, version, meta_len = struct.unpack(HEADER_FMT, blob[:HEADER_SIZE])
    if magic != MAGIC:
        raise DataError(f"Bad magic {magic!r}; not a micformer checkpoint")
    if version != VERSION:
        raise DataError(f"Unsupported checkpoint version {version}")
    return int(meta_len)


def loads_checkpoint(blob: bytes) -> Checkpoint:
    """Deserialize bytes produced by :func:`dumps_checkpoint`."""

    _check_header(blob)
    body_end = len(blob) - CRC_SIZE
    (stored_crc,) = struct.unpack(CRC_FMT, blob[body_end:])
    if zlib.crc32(blob[:body_end]) != stored_crc:
        raise DataError("Checksum mismatch: checkpoint is corrupted")
    reader = _Reader(blob, body_end)
    _, _, meta_len = reader.unpack(HEADER_FMT, "header")
    try:
        meta_doc = json.loads(reader.take(meta_len, "meta block").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"Corrupt checkpoint meta block: {exc}") from exc
    (count,) = reader.unpack("<I", "tensor count")
    params: list[tuple[str, Tensor]] = []
    moments_m: list[tuple[str, Tensor]] = []
    moments_v: list[tuple[str, Tensor]] = []
    for _ in range(count):
        (name_len,) = reader.unpack("<H", "name length")
        name = reader.take(name_len, "tensor name").decode("utf-8")
        tag, rank = reader.unpack("<BB", f"header of {name}")
        dtype = DTYPE_TAGS.get(tag)
        if dtype is None:
            raise DataError(f"Unknown dtype tag {tag} for tensor {name}")
        if rank > MAX_RANK:
            raise DataError(f"Tensor {name} declares rank {rank} > {MAX_RANK}")
        extents = reader.unpack(f"<{rank}I", f"extents of {name}")
        count_values = int(np.prod(extents, dtype=np.int64)) if extents else 1
        raw = reader.take(count_values * dtype.itemsize, f"values of {name}")
        arr = np.frombuffer(raw, dtype=dtype).reshape(extents).astype(dtype.newbyteorder("="))
        tensor = Tensor(arr, dtype=arr.dtype)
        if name.startswith(OPTIM_M):
            moments_m.append((name[len(OPTIM_M) :], tensor))
        elif name.startswith(OPTIM_V):
            moments_v.append((name[len(OPTIM_V) :], tensor))
        else:
            params.append((name, tensor))
    if reader.pos != body_end:
        raise DataError(f"{body_end - reader.pos} trailing bytes after the last tensor")
    return Checkpoint(
        params=ParameterStore(params),
        config=dict(meta_doc.get("config", {})),
        meta=dict(meta_doc.get("meta", {})),
        optim_m=ParameterStore(moments_m),
        optim_v=ParameterStore(moments_v),
    )


def write_checkpoint(path: str | Path, ckpt: Checkpoint) -> Path:
    target = atomic_write_bytes(path, dumps_checkpoint(ckpt))
    logger.info("Checkpoint written to %s (%d tensors)", target, len(ckpt.params))
    return target


def read_checkpoint(path: str | Path) -> Checkpoint:
    return loads_checkpoint(Path(path).read_bytes())


def save_params(
    store: Mapping[str, Tensor], path: str | Path, *, config: Mapping[str, Any] | None = None
) -> Path:
    params = store if isinstance(store, ParameterStore) else ParameterStore(store)
    return write_checkpoint(path, Checkpoint(params=params, config=dict(config or {})))


def load_params(path: str | Path) -> ParameterStore:
    return read_checkpoint(path).params


__all__ = [
    "Checkpoint",
    "DTYPE_TAGS",
    "MAGIC",
    "VERSION",
    "dumps_checkpoint",
    "load_params",
    "loads_checkpoint",
    "read_checkpoint",
    "save_params",
    "write_checkpoint",
]
