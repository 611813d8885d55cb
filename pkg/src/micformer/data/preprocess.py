"""Intensity normalisation and divisibility padding."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TypeVar, overload

import numpy as np

from micformer.contracts.error import BadInputError, ShapeError

from .volumes import LabelMap, Volume

_STD_FLOOR = 1e-12

Grid = TypeVar("Grid", Volume, LabelMap)


def normalize_intensity(v: Volume) -> Volume:
    """Zero mean, unit variance; a constant volume maps to all zeros."""

    data = v.data.astype(np.float64)
    mean = data.mean()
    std = data.std()
    if std < _STD_FLOOR:
        out = np.zeros_like(data)
    else:
        out = (data - mean) / std
    return Volume(out.astype(np.float32), v.spacing, v.modality)


@dataclass(frozen=True)
class PadSpec:
    """Extents before padding and the zero margins added on each side."""

    original: tuple[int, int, int]
    before: tuple[int, int, int]
    after: tuple[int, int, int]

    @property
    def padded(self) -> tuple[int, int, int]:
        o, b, a = self.original, self.before, self.after
        return (o[0] + b[0] + a[0], o[1] + b[1] + a[1], o[2] + b[2] + a[2])


def pad_spec(extents: tuple[int, int, int], multiple: int) -> PadSpec:
    if multiple < 1:
        raise BadInputError(f"padding multiple must be >= 1, got {multiple}")
    before: list[int] = []
    after: list[int] = []
    for e in extents:
        total = -e % multiple
        before.append(total // 2)
        after.append(total - total // 2)
    return PadSpec(
        tuple(extents),  # type: ignore[arg-type]
        (before[0], before[1], before[2]),
        (after[0], after[1], after[2]),
    )


def pad_to_divisible(obj: Grid, multiple: int) -> tuple[Grid, PadSpec]:
    """Symmetric zero padding (labels pad with background) up to the next multiple."""

    spec = pad_spec(obj.extents, multiple)
    if spec.padded == spec.original:
        return obj, spec
    widths = tuple(zip(spec.before, spec.after, strict=True))
    data = np.pad(obj.data, widths, mode="constant", constant_values=0)
    if isinstance(obj, Volume):
        return Volume(data, obj.spacing, obj.modality), spec  # type: ignore[return-value]
    return LabelMap(data, obj.spacing), spec  # type: ignore[return-value]


@overload
def crop_to_original(obj: Volume, pad: PadSpec) -> Volume: ...
@overload
def crop_to_original(obj: LabelMap, pad: PadSpec) -> LabelMap: ...
@overload
def crop_to_original(obj: np.ndarray, pad: PadSpec) -> np.ndarray: ...


def crop_to_original(
    obj: Volume | LabelMap | np.ndarray, pad: PadSpec
) -> Volume | LabelMap | np.ndarray:
    """Inverse of :func:`pad_to_divisible`; arrays may carry trailing channel axes."""

    data = obj if isinstance(obj, np.ndarray) else obj.data
    if tuple(data.shape[:3]) != pad.padded:
        raise ShapeError(f"cannot crop {data.shape[:3]}: padding spec expects {pad.padded}")
    region = tuple(
        slice(b, b + o) for b, o in zip(pad.before, pad.original, strict=True)
    )
    cropped = data[region]
    if isinstance(obj, Volume):
        return Volume(cropped, obj.spacing, obj.modality)
    if isinstance(obj, LabelMap):
        return LabelMap(cropped, obj.spacing)
    return np.array(cropped)


__all__ = ["PadSpec", "crop_to_original", "normalize_intensity", "pad_spec", "pad_to_divisible"]
