from __future__ import annotations

import os
import struct
import zlib
from pathlib import Path
from typing import Any

import numpy as np
import pytest

from micformer.contracts.error import DataError
from micformer.core.tensor import Tensor
from micformer.data.volumes import LabelMap, Modality, Volume
from micformer.io import atomic
from micformer.io.checkpoint import (
    Checkpoint,
    dumps_checkpoint,
    load_params,
    loads_checkpoint,
    read_checkpoint,
    save_params,
    write_checkpoint,
)
from micformer.io.mvol import HEADER_FMT, HEADER_SIZE, dumps_mvol, loads_mvol, read_mvol, write_mvol
from micformer.model.params import ParameterStore

pytestmark = pytest.mark.unit


def _store(seed: int = 0) -> ParameterStore:
    rng = np.random.default_rng(seed)
    return ParameterStore(
        [
            ("a.embed.weight", Tensor(rng.standard_normal((8, 4)), dtype="float32")),
            ("a.embed.bias", Tensor(np.zeros(4), dtype="float32")),
            ("head.scale", Tensor(np.array(2.5))),
        ]
    )


def test_checkpoint_round_trip_is_bitwise(tmp_path: Path) -> None:
    store = _store()
    path = save_params(store, tmp_path / "w.micf", config={"channels": 4})
    restored = load_params(path)
    assert restored.equals(store)
    assert restored["a.embed.weight"].dtype == np.float32
    assert restored["head.scale"].shape == ()
    assert read_checkpoint(path).config == {"channels": 4}


def test_checkpoint_carries_meta_and_optimizer_moments(tmp_path: Path) -> None:
    store = _store(1)
    m = ParameterStore((n, Tensor(np.ones(t.shape), dtype=t.dtype)) for n, t in store.items())
    v = ParameterStore((n, Tensor(np.full(t.shape, 0.5), dtype=t.dtype)) for n, t in store.items())
    ckpt = Checkpoint(store, {"seed": 3}, {"epoch": 4, "step": 17}, m, v)
    back = read_checkpoint(write_checkpoint(tmp_path / "e.micf", ckpt))
    assert back.params.equals(store)
    assert back.optim_m.equals(m)
    assert back.optim_v.equals(v)
    assert back.meta == {"epoch": 4, "step": 17}


def test_empty_store_round_trips() -> None:
    back = loads_checkpoint(dumps_checkpoint(Checkpoint(ParameterStore())))
    assert len(back.params) == 0


def test_checkpoint_rejects_corruption() -> None:
    blob = bytearray(dumps_checkpoint(Checkpoint(_store(2))))
    blob[len(blob) // 2] ^= 0xFF
    with pytest.raises(DataError, match="Checksum"):
        loads_checkpoint(bytes(blob))

    good = dumps_checkpoint(Checkpoint(_store(2)))
    with pytest.raises(DataError, match="Bad magic"):
        loads_checkpoint(b"XXXX" + good[4:])
    with pytest.raises(DataError, match="Truncated"):
        loads_checkpoint(good[:5])


def test_mvol_volume_round_trip(tmp_path: Path) -> None:
    data = np.random.default_rng(3).standard_normal((8, 8, 8)).astype(np.float32)
    vol = Volume(data, (1.0, 0.5, 2.0), Modality.CT)
    back = read_mvol(write_mvol(vol, tmp_path / "ct.mvol"), Modality.CT)
    assert isinstance(back, Volume)
    assert np.array_equal(back.data, data)
    assert back.spacing == (1.0, 0.5, 2.0)
    assert back.modality is Modality.CT


def test_mvol_header_stores_extents_x_first() -> None:
    vol = Volume(np.zeros((2, 3, 4)), (1.0, 1.0, 3.0))
    header = struct.unpack(HEADER_FMT, dumps_mvol(vol)[:HEADER_SIZE])
    assert header[0] == b"MVOL"
    assert header[4:7] == (4, 3, 2)
    assert header[7:10] == (3.0, 1.0, 1.0)


def test_mvol_label_kind() -> None:
    labels = LabelMap(np.arange(27).reshape(3, 3, 3) % 4)
    back = loads_mvol(dumps_mvol(labels))
    assert isinstance(back, LabelMap)
    assert back.data.dtype == np.uint8
    assert np.array_equal(back.data, labels.data)


def test_mvol_rejects_bad_files() -> None:
    blob = dumps_mvol(Volume(np.ones((8, 8, 8))))
    with pytest.raises(DataError, match="Bad magic"):
        loads_mvol(b"XXXX" + blob[4:])
    with pytest.raises(DataError):
        loads_mvol(blob + b"\x00")
    flipped = bytearray(blob)
    flipped[HEADER_SIZE + 10] ^= 0x01
    with pytest.raises(DataError, match="Checksum"):
        loads_mvol(bytes(flipped))

    header = struct.pack(HEADER_FMT, b"MVOL", 1, 0, 1, 10, 10, 10, 1.0, 1.0, 1.0)
    body = header + np.zeros(500, dtype="<f4").tobytes()
    short = body + struct.pack("<I", zlib.crc32(body))
    with pytest.raises(DataError, match="Truncated"):
        loads_mvol(short)


def test_mvol_spacing_round_trips_exactly(tmp_path: Path) -> None:
    vol = Volume(np.zeros((2, 2, 2)), (0.1, 0.7, 1.3), Modality.MRI)
    assert vol.spacing == tuple(float(np.float32(s)) for s in (0.1, 0.7, 1.3))
    back = read_mvol(write_mvol(vol, tmp_path / "mri.mvol"), Modality.MRI)
    assert back.spacing == vol.spacing
    labels = LabelMap(np.zeros((2, 2, 2)), (0.1, 0.1, 0.1))
    assert loads_mvol(dumps_mvol(labels)).spacing == labels.spacing
    with pytest.raises(DataError):
        Volume(np.zeros((2, 2, 2)), (1e-60, 1.0, 1.0))


def test_atomic_write_syncs_before_rename(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    events: list[str] = []
    real_fsync, real_replace = os.fsync, os.replace

    def fsync(fd: int) -> None:
        events.append("fsync")
        real_fsync(fd)

    def replace(src: Any, dst: Any) -> None:
        events.append("replace")
        real_replace(src, dst)

    monkeypatch.setattr(atomic.os, "fsync", fsync)
    monkeypatch.setattr(atomic.os, "replace", replace)
    target = atomic.atomic_write_bytes(tmp_path / "blob.bin", b"payload")
    assert events == ["fsync", "replace"]
    assert target.read_bytes() == b"payload"
    assert [p.name for p in tmp_path.iterdir()] == ["blob.bin"]


def test_failed_rename_keeps_the_old_file(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    target = tmp_path / "blob.bin"
    target.write_bytes(b"old")

    def broken_replace(src: Any, dst: Any) -> None:
        raise OSError("disk full")

    monkeypatch.setattr(atomic.os, "replace", broken_replace)
    with pytest.raises(OSError):
        atomic.atomic_write_bytes(target, b"new")
    assert target.read_bytes() == b"old"
    assert [p.name for p in tmp_path.iterdir()] == ["blob.bin"]
