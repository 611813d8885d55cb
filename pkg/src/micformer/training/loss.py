"""Cross-entropy plus soft-Dice segmentation loss."""

from __future__ import annotations

import numpy as np

from micformer.contracts.error import BadInputError, ShapeError
from micformer.core.tensor import (
    Tensor,
    add,
    log_softmax,
    mul,
    reciprocal,
    reduce,
    reshape,
    scale,
    softmax,
)
from micformer.data.volumes import LabelMap


def one_hot(labels: np.ndarray, num_classes: int, dtype: np.dtype) -> np.ndarray:
    return np.eye(num_classes, dtype=dtype)[labels]


def seg_loss(
    logits: Tensor,
    labels: LabelMap | np.ndarray,
    ce_weight: float = 1.0,
    dice_weight: float = 1.0,
) -> Tensor:
    """``ce_weight * CE + dice_weight * (1 - mean soft Dice)`` for logits ``[D, H, W, K]``.

    The Dice mean runs over foreground classes present in ``labels``; with no
    foreground present the Dice term is zero.
    """

    y = labels.data if isinstance(labels, LabelMap) else np.asarray(labels)
    if logits.ndim != 4 or logits.shape[:3] != y.shape:
        raise ShapeError(f"logits {logits.shape} do not match labels {y.shape}")
    k = logits.shape[3]
    if y.dtype.kind not in "iu" or (y.size and (int(y.min()) < 0 or int(y.max()) >= k)):
        raise BadInputError(f"labels must be integer class indices in [0, {k})")
    n = y.size
    target = Tensor._from_array(one_hot(y.reshape(-1), k, logits.dtype))

    flat = reshape(logits, (n, k))
    ce = scale(reduce("sum", mul(log_softmax(flat, axis=-1), target)), -1.0 / n)
    loss = scale(ce, ce_weight)

    present = np.zeros(k, dtype=logits.dtype)
    counts = np.bincount(y.reshape(-1), minlength=k)
    present[1:] = counts[1:] > 0
    n_present = int(present.sum())
    if dice_weight and n_present:
        probs = softmax(flat, axis=-1)
        inter = reduce("sum", mul(probs, target), axis=0)
        denom = add(
            reduce("sum", probs, axis=0),
            Tensor._from_array((counts + (1 - present)).astype(logits.dtype)),
        )
        per_class = scale(mul(inter, reciprocal(denom)), 2.0)
        mean_dice = scale(reduce("sum", mul(per_class, Tensor._from_array(present))), 1.0 / n_present)
        loss = add(loss, scale(add(scale(mean_dice, -1.0), 1.0), dice_weight))
    return loss


__all__ = ["one_hot", "seg_loss"]
