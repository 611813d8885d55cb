"""Dice, IoU and HD95 over label maps, and the per-case report."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.spatial import cKDTree

from micformer.contracts.error import BadInputError, ShapeError
from micformer.data.volumes import UNIT_SPACING, LabelMap, Spacing

from .constants import HD95_PERCENTILE, REPORT_SCHEMA

LabelLike = LabelMap | np.ndarray


def _labels(x: LabelLike) -> np.ndarray:
    arr = x.data if isinstance(x, LabelMap) else np.asarray(x)
    if arr.ndim != 3:
        raise ShapeError(f"label maps must be [D, H, W], got {arr.shape}")
    return arr


def _pair(pred: LabelLike, gt: LabelLike) -> tuple[np.ndarray, np.ndarray]:
    p, g = _labels(pred), _labels(gt)
    if p.shape != g.shape:
        raise ShapeError(f"prediction {p.shape} and ground truth {g.shape} extents differ")
    return p, g


def _counts(p: np.ndarray, g: np.ndarray, c: int) -> tuple[int, int, int]:
    pm, gm = p == c, g == c
    return int(pm.sum()), int(gm.sum()), int((pm & gm).sum())


def dice(pred: LabelLike, gt: LabelLike, c: int) -> float:
    """``2|P∩G| / (|P|+|G|)``; 1.0 when both masks are empty."""

    n_p, n_g, inter = _counts(*_pair(pred, gt), c)
    if n_p + n_g == 0:
        return 1.0
    return 2.0 * inter / (n_p + n_g)


def iou(pred: LabelLike, gt: LabelLike, c: int) -> float:
    n_p, n_g, inter = _counts(*_pair(pred, gt), c)
    union = n_p + n_g - inter
    if union == 0:
        return 1.0
    return inter / union


def miou(pred: LabelLike, gt: LabelLike, classes: int) -> float:
    """Mean IoU over foreground classes ``1..classes-1``."""

    if classes < 2:
        raise BadInputError("miou needs at least one foreground class")
    return float(np.mean([iou(pred, gt, c) for c in range(1, classes)]))


def boundary(mask: np.ndarray) -> np.ndarray:
    """Voxels of ``mask`` with at least one 6-neighbour outside it (volume faces count as outside)."""

    m = np.asarray(mask, dtype=bool)
    p = np.pad(m, 1, constant_values=False)
    interior = (
        p[2:, 1:-1, 1:-1]
        & p[:-2, 1:-1, 1:-1]
        & p[1:-1, 2:, 1:-1]
        & p[1:-1, :-2, 1:-1]
        & p[1:-1, 1:-1, 2:]
        & p[1:-1, 1:-1, :-2]
    )
    return m & ~interior


def nearest_rank(values: np.ndarray, q: float) -> float:
    """Nearest-rank percentile: the ``ceil(q * n)``-th smallest value."""

    ordered = np.sort(np.asarray(values, dtype=np.float64))
    rank = max(math.ceil(q * ordered.size), 1)
    return float(ordered[rank - 1])


def _directed(src: np.ndarray, dst_tree: cKDTree, q: float) -> float:
    dist, _ = dst_tree.query(src, k=1)
    return nearest_rank(dist, q)


def volume_diagonal(shape: tuple[int, ...], spacing: Spacing) -> float:
    return float(math.sqrt(sum((e * s) ** 2 for e, s in zip(shape, spacing, strict=True))))


def hd95(
    pred: LabelLike, gt: LabelLike, c: int, spacing: Spacing | None = None
) -> float:
    """Symmetric 95th-percentile surface distance in mm.

    Both masks empty gives 0.0; exactly one empty gives the physical diagonal of the volume.
    """

    p, g = _pair(pred, gt)
    sp = spacing if spacing is not None else (
        gt.spacing if isinstance(gt, LabelMap) else UNIT_SPACING
    )
    pm, gm = p == c, g == c
    has_p, has_g = bool(pm.any()), bool(gm.any())
    if not has_p and not has_g:
        return 0.0
    if has_p != has_g:
        return volume_diagonal(p.shape, sp)
    scale = np.asarray(sp, dtype=np.float64)
    bp = np.argwhere(boundary(pm)).astype(np.float64) * scale
    bg = np.argwhere(boundary(gm)).astype(np.float64) * scale
    return max(
        _directed(bp, cKDTree(bg), HD95_PERCENTILE),
        _directed(bg, cKDTree(bp), HD95_PERCENTILE),
    )


@dataclass(frozen=True)
class MetricsReport:
    """Per-class Dice/IoU/HD95 (index = class id) and foreground means."""

    num_classes: int
    dice: tuple[float, ...]
    iou: tuple[float, ...]
    hd95: tuple[float, ...]
    voxels_gt: tuple[int, ...]
    voxels_pred: tuple[int, ...]
    case_id: str | None = None
    spacing: Spacing | None = None
    mean_dice: float = field(init=False)
    miou: float = field(init=False)
    mean_hd95: float = field(init=False)

    def __post_init__(self) -> None:
        for name in ("dice", "iou", "hd95", "voxels_gt", "voxels_pred"):
            if len(getattr(self, name)) != self.num_classes:
                raise ShapeError(f"report field {name} must have {self.num_classes} entries")
        fg = slice(1, self.num_classes)
        object.__setattr__(self, "mean_dice", float(np.mean(self.dice[fg])))
        object.__setattr__(self, "miou", float(np.mean(self.iou[fg])))
        object.__setattr__(self, "mean_hd95", float(np.mean(self.hd95[fg])))

    def to_dict(self) -> dict[str, Any]:
        def by_class(values: tuple[Any, ...]) -> dict[str, Any]:
            return {str(c): v for c, v in enumerate(values)}

        doc: dict[str, Any] = {
            "schema": REPORT_SCHEMA,
            "num_classes": self.num_classes,
            "dice": by_class(self.dice),
            "iou": by_class(self.iou),
            "hd95": by_class(self.hd95),
            "mean_dice": self.mean_dice,
            "miou": self.miou,
            "mean_hd95": self.mean_hd95,
            "voxels_gt": by_class(self.voxels_gt),
            "voxels_pred": by_class(self.voxels_pred),
        }
        if self.case_id is not None:
            doc["case_id"] = self.case_id
        if self.spacing is not None:
            doc["spacing"] = list(self.spacing)
        return doc

    def to_text(self) -> str:
        """Flat ``metric.class = value`` lines followed by the means."""

        lines: list[str] = []
        if self.case_id is not None:
            lines.append(f"case = {self.case_id}")
        for metric in ("dice", "iou", "hd95"):
            for c, value in enumerate(getattr(self, metric)):
                lines.append(f"{metric}.{c} = {value:.6f}")
        for c in range(self.num_classes):
            lines.append(f"voxels_gt.{c} = {self.voxels_gt[c]}")
            lines.append(f"voxels_pred.{c} = {self.voxels_pred[c]}")
        lines.append(f"mean_dice = {self.mean_dice:.6f}")
        lines.append(f"miou = {self.miou:.6f}")
        lines.append(f"mean_hd95 = {self.mean_hd95:.6f}")
        return "\n".join(lines) + "\n"


def report(
    pred: LabelLike,
    gt: LabelLike,
    num_classes: int,
    *,
    spacing: Spacing | None = None,
    case_id: str | None = None,
) -> MetricsReport:
    p, g = _pair(pred, gt)
    if num_classes < 2:
        raise BadInputError("reports need at least 2 classes")
    top = max(int(p.max()), int(g.max()))
    if top >= num_classes:
        raise BadInputError(f"label index {top} is out of range for {num_classes} classes")
    sp = spacing if spacing is not None else (
        gt.spacing if isinstance(gt, LabelMap) else UNIT_SPACING
    )
    classes = range(num_classes)
    return MetricsReport(
        num_classes=num_classes,
        dice=tuple(dice(p, g, c) for c in classes),
        iou=tuple(iou(p, g, c) for c in classes),
        hd95=tuple(hd95(p, g, c, sp) for c in classes),
        voxels_gt=tuple(int((g == c).sum()) for c in classes),
        voxels_pred=tuple(int((p == c).sum()) for c in classes),
        case_id=case_id,
        spacing=sp,
    )


@dataclass(frozen=True)
class AggregateReport:
    """Arithmetic means over per-case reports."""

    cases: tuple[MetricsReport, ...]
    mean_dice: float
    miou: float
    mean_hd95: float
    dice: tuple[float, ...]
    iou: tuple[float, ...]
    hd95: tuple[float, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "cases": [r.to_dict() for r in self.cases],
            "aggregate": {
                "count": len(self.cases),
                "mean_dice": self.mean_dice,
                "miou": self.miou,
                "mean_hd95": self.mean_hd95,
                "dice": {str(c): v for c, v in enumerate(self.dice)},
                "iou": {str(c): v for c, v in enumerate(self.iou)},
                "hd95": {str(c): v for c, v in enumerate(self.hd95)},
            },
        }

    def to_text(self) -> str:
        body = "".join(r.to_text() + "\n" for r in self.cases)
        return (
            body
            + f"aggregate.cases = {len(self.cases)}\n"
            + f"aggregate.mean_dice = {self.mean_dice:.6f}\n"
            + f"aggregate.miou = {self.miou:.6f}\n"
            + f"aggregate.mean_hd95 = {self.mean_hd95:.6f}\n"
        )


def aggregate_reports(reports: Sequence[MetricsReport]) -> AggregateReport:
    if not reports:
        raise BadInputError("cannot aggregate zero reports")
    k = reports[0].num_classes
    if any(r.num_classes != k for r in reports):
        raise ShapeError("reports disagree on the number of classes")

    def per_class(name: str) -> tuple[float, ...]:
        table = np.array([getattr(r, name) for r in reports], dtype=np.float64)
        return tuple(float(v) for v in table.mean(axis=0))

    return AggregateReport(
        cases=tuple(reports),
        mean_dice=float(np.mean([r.mean_dice for r in reports])),
        miou=float(np.mean([r.miou for r in reports])),
        mean_hd95=float(np.mean([r.mean_hd95 for r in reports])),
        dice=per_class("dice"),
        iou=per_class("iou"),
        hd95=per_class("hd95"),
    )


__all__ = [
    "AggregateReport",
    "MetricsReport",
    "aggregate_reports",
    "boundary",
    "dice",
    "hd95",
    "iou",
    "miou",
    "nearest_rank",
    "report",
    "volume_diagonal",
]
