"""Volumetric containers: intensity volumes, label maps and paired cases.

Arrays are indexed ``[D, H, W]`` (z, y, x) with x varying fastest; ``spacing`` is
given in millimetres in the same axis order.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import StrEnum

import numpy as np

from micformer.contracts.error import BadInputError, DataError

Spacing = tuple[float, float, float]
UNIT_SPACING: Spacing = (1.0, 1.0, 1.0)


class Modality(StrEnum):
    CT = "CT"
    MRI = "MRI"
    OTHER = "other"


def _frozen(arr: np.ndarray, dtype: type[np.generic]) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


def _check_spacing(spacing: Spacing) -> Spacing:
    # held at float32 precision, the width .mvol stores it with
    with np.errstate(over="ignore"):
        values = tuple(float(np.float32(s)) for s in spacing)
    if len(values) != 3 or not all(np.isfinite(values)) or any(s <= 0 for s in values):
        raise DataError(f"voxel spacing must be three positive numbers, got {spacing}")
    return (values[0], values[1], values[2])


@dataclass(frozen=True)
class Volume:
    """3D float32 intensity grid."""

    data: np.ndarray
    spacing: Spacing = UNIT_SPACING
    modality: Modality = Modality.OTHER

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise DataError(f"volume must be a non-empty [D, H, W] grid, got shape {arr.shape}")
        arr = _frozen(arr, np.float32)
        if not np.all(np.isfinite(arr)):
            raise DataError("volume intensities must be finite")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))
        object.__setattr__(self, "modality", Modality(self.modality))

    @property
    def extents(self) -> tuple[int, int, int]:
        d, h, w = self.data.shape
        return (d, h, w)


@dataclass(frozen=True)
class LabelMap:
    """3D grid of class indices (0 = background)."""

    data: np.ndarray
    spacing: Spacing = UNIT_SPACING

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise DataError(f"label map must be a non-empty [D, H, W] grid, got shape {arr.shape}")
        if arr.dtype.kind == "f" and not np.array_equal(arr, np.round(arr)):
            raise DataError("label map holds non-integer values")
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise DataError("label indices must lie in [0, 255]")
        object.__setattr__(self, "data", _frozen(arr, np.uint8))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def extents(self) -> tuple[int, int, int]:
        d, h, w = self.data.shape
        return (d, h, w)

    def check_classes(self, num_classes: int) -> None:
        top = int(self.data.max())
        if top >= num_classes:
            raise BadInputError(f"label index {top} is out of range for {num_classes} classes")


@dataclass(frozen=True)
class CasePair:
    """Co-registered CT and MRI volumes with CT-space labels."""

    case_id: str
    ct: Volume
    mri: Volume
    labels: LabelMap

    def __post_init__(self) -> None:
        if not (self.ct.extents == self.mri.extents == self.labels.extents):
            raise DataError(
                f"case {self.case_id}: extents differ "
                f"(ct {self.ct.extents}, mri {self.mri.extents}, labels {self.labels.extents})"
            )

    @property
    def extents(self) -> tuple[int, int, int]:
        return self.ct.extents

    @property
    def spacing(self) -> Spacing:
        return self.ct.spacing


__all__ = ["CasePair", "LabelMap", "Modality", "Spacing", "UNIT_SPACING", "Volume"]
