"""Synthetic paired CT/MRI cases.

Each case places ``K - 1`` non-overlapping ellipsoids (class ids ``1..K-1``) on a
background. CT renders every ellipsoid at one shared intensity with sharp edges, so
class identity is not recoverable from CT alone. MRI renders a distinct level per
class but is warped by a smooth displacement field, Gaussian-blurred and noisy.
"""

from __future__ import annotations

import logging
import math

import numpy as np
import scipy.ndimage as ndi

from micformer.contracts.error import BadInputError
from micformer.core.rng import derive_seed, make_rng

from .volumes import UNIT_SPACING, CasePair, LabelMap, Modality, Volume

logger = logging.getLogger("micformer")

MIN_EDGE = 32
MIN_CLASSES = 3
RADIUS_RANGE = (0.08, 0.16)
PLACEMENT_GAP = 2.0
MAX_PLACEMENT_ATTEMPTS = 2000
CT_FOREGROUND = 1.0
NOISE_STD = 0.1
MRI_BLUR_SIGMA = 2.0


def _place_ellipsoids(
    rng: np.random.Generator, edge: int, count: int
) -> list[tuple[np.ndarray, np.ndarray]]:
    lo, hi = RADIUS_RANGE[0] * edge, RADIUS_RANGE[1] * edge
    placed: list[tuple[np.ndarray, np.ndarray]] = []
    attempts = 0
    while len(placed) < count:
        attempts += 1
        if attempts > MAX_PLACEMENT_ATTEMPTS:
            raise BadInputError(
                f"could not place {count} non-overlapping ellipsoids in a {edge}^3 volume",
                hint="increase the edge or reduce the class count",
            )
        radii = rng.uniform(lo, hi, size=3)
        margin = radii + 1.0
        center = rng.uniform(margin, edge - 1.0 - margin)
        bound = radii.max()
        if all(
            np.linalg.norm(center - c) > bound + r.max() + PLACEMENT_GAP for c, r in placed
        ):
            placed.append((center, radii))
    return placed


def _smooth_displacement(
    rng: np.random.Generator, edge: int, max_shift: float
) -> np.ndarray:
    """``[3, E, E, E]`` smooth field whose largest voxel displacement equals ``max_shift``."""

    sigma = max(edge / 8.0, 1.0)
    field = np.stack(
        [ndi.gaussian_filter(rng.standard_normal((edge, edge, edge)), sigma) for _ in range(3)]
    )
    peak = float(np.sqrt((field**2).sum(axis=0)).max())
    if peak == 0.0 or max_shift == 0.0:
        return np.zeros_like(field)
    return field * (max_shift / peak)


def synth_case(
    seed: int,
    edge: int,
    classes: int,
    *,
    misalignment: float = 2.0,
    case_id: str | None = None,
) -> CasePair:
    """Deterministic case for ``(seed, edge, classes, misalignment)``."""

    if edge < MIN_EDGE:
        raise BadInputError(f"edge must be >= {MIN_EDGE}, got {edge}")
    if classes < MIN_CLASSES:
        raise BadInputError(f"classes must be >= {MIN_CLASSES}, got {classes}")
    if classes > 256:
        raise BadInputError("classes must fit a uint8 label map")
    if misalignment < 0:
        raise BadInputError("misalignment must be >= 0")

    shape = (edge, edge, edge)
    grid = np.indices(shape, dtype=np.float64)  # (z, y, x)
    labels = np.zeros(shape, dtype=np.uint8)
    placement = _place_ellipsoids(make_rng(seed, "synth", "placement"), edge, classes - 1)
    for k, (center, radii) in enumerate(placement, start=1):
        dist = sum(((grid[a] - center[a]) / radii[a]) ** 2 for a in range(3))
        labels[dist <= 1.0] = k

    ct = (labels > 0).astype(np.float64) * CT_FOREGROUND
    ct += make_rng(seed, "synth", "ct_noise").normal(0.0, NOISE_STD, shape)

    levels = np.arange(classes, dtype=np.float64) / (classes - 1)
    mri = levels[labels]
    disp = _smooth_displacement(make_rng(seed, "synth", "displacement"), edge, misalignment)
    if misalignment > 0:
        mri = ndi.map_coordinates(mri, grid + disp, order=1, mode="nearest")
    mri = ndi.gaussian_filter(mri, MRI_BLUR_SIGMA)
    mri += make_rng(seed, "synth", "mri_noise").normal(0.0, NOISE_STD, shape)

    cid = case_id if case_id is not None else f"case_{seed:016x}"
    logger.debug("Synthesized %s (edge=%d, classes=%d)", cid, edge, classes)
    return CasePair(
        case_id=cid,
        ct=Volume(ct.astype(np.float32), UNIT_SPACING, Modality.CT),
        mri=Volume(mri.astype(np.float32), UNIT_SPACING, Modality.MRI),
        labels=LabelMap(labels, UNIT_SPACING),
    )


def case_seed(seed: int, index: int) -> int:
    return derive_seed(seed, "case", index)


def synth_cases(
    seed: int, count: int, edge: int, classes: int, *, misalignment: float = 2.0
) -> list[CasePair]:
    """``count`` cases with ids ``case_000, case_001, ...`` and independent child seeds."""

    width = max(3, int(math.log10(max(count, 1))) + 1)
    return [
        synth_case(
            case_seed(seed, i),
            edge,
            classes,
            misalignment=misalignment,
            case_id=f"case_{i:0{width}d}",
        )
        for i in range(count)
    ]


def histogram_classifier_accuracy(
    features: np.ndarray,
    labels: np.ndarray,
    bins: int,
    train_mask: np.ndarray,
) -> float:
    """Held-out accuracy of a majority-vote classifier over a joint feature histogram.

    ``features`` is ``[N, F]``; each feature is cut into ``bins`` equal-width bins
    spanning its training range. Bins never seen in training predict the overall
    majority class.
    """

    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim == 1:
        feats = feats[:, None]
    y = np.asarray(labels).astype(np.int64)
    train = np.asarray(train_mask, dtype=bool)
    if bins < 1 or feats.shape[0] != y.shape[0] or train.shape != y.shape:
        raise BadInputError("features, labels and train_mask must align and bins must be >= 1")
    if not train.any() or train.all():
        raise BadInputError("train_mask must select a proper, non-empty subset")
    lo = feats[train].min(axis=0)
    hi = feats[train].max(axis=0)
    width = np.where(hi > lo, (hi - lo) / bins, 1.0)
    idx = np.clip(((feats - lo) / width).astype(np.int64), 0, bins - 1)
    joint = np.zeros(y.shape[0], dtype=np.int64)
    for f in range(feats.shape[1]):
        joint = joint * bins + idx[:, f]
    n_classes = int(y.max()) + 1
    counts = np.zeros((bins ** feats.shape[1], n_classes), dtype=np.int64)
    np.add.at(counts, (joint[train], y[train]), 1)
    fallback = int(np.bincount(y[train], minlength=n_classes).argmax())
    seen = counts.sum(axis=1) > 0
    vote = np.where(seen, counts.argmax(axis=1), fallback)
    test = ~train
    return float((vote[joint[test]] == y[test]).mean())


__all__ = [
    "MIN_CLASSES",
    "MIN_EDGE",
    "case_seed",
    "histogram_classifier_accuracy",
    "synth_case",
    "synth_cases",
]
