"""Seeded train/test partition of case ids."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

from micformer.contracts.error import BadInputError
from micformer.core.rng import make_rng


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[str, ...]
    test: tuple[str, ...]

    def to_dict(self) -> dict[str, list[str]]:
        return {"train": list(self.train), "test": list(self.test)}


def make_split(case_ids: Sequence[str], train_fraction: float, seed: int) -> DatasetSplit:
    """Shuffle ids with a seeded stream and cut ``round(n * fraction)`` into train.

    Both sides keep at least one case.
    """

    ids = list(case_ids)
    if len(ids) < 2:
        raise BadInputError(f"a split needs at least 2 cases, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise BadInputError("case ids must be unique")
    if not 0.0 < train_fraction < 1.0:
        raise BadInputError("train_fraction must be within (0, 1)")
    order = make_rng(seed, "split").permutation(len(ids))
    n_train = min(max(math.floor(len(ids) * train_fraction + 0.5), 1), len(ids) - 1)
    shuffled = [ids[i] for i in order]
    return DatasetSplit(train=tuple(shuffled[:n_train]), test=tuple(shuffled[n_train:]))


__all__ = ["DatasetSplit", "make_split"]
