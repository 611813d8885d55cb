"""Labelled, platform-independent random streams.

Every random draw in the toolkit comes from ``make_rng(seed, *labels)``. The child
seed is derived by hashing the root seed together with the labels through BLAKE2s,
so streams for different purposes (initialisation, synthesis, shuffling) never
overlap and do not depend on call order.
"""

from __future__ import annotations

import hashlib

import numpy as np

from micformer.contracts.error import BadInputError

_SEED_BITS = 64
_SEED_MASK = (1 << _SEED_BITS) - 1


def _label_bytes(label: str | int) -> bytes:
    if isinstance(label, bool):
        raise BadInputError("rng labels must be str or int, not bool")
    if isinstance(label, int):
        return b"i" + label.to_bytes(16, "big", signed=True)
    return b"s" + label.encode("utf-8")


def derive_seed(seed: int, *labels: str | int) -> int:
    """Return a deterministic 64-bit child seed for ``(seed, labels)``."""

    if not 0 <= seed <= _SEED_MASK:
        raise BadInputError(f"seed must fit in 64 bits, got {seed}")
    h = hashlib.blake2s(seed.to_bytes(8, "big"), digest_size=8)
    for label in labels:
        part = _label_bytes(label)
        h.update(len(part).to_bytes(4, "big"))
        h.update(part)
    return int.from_bytes(h.digest(), "big")


def make_rng(seed: int, *labels: str | int) -> np.random.Generator:
    """PCG64 generator seeded from the labelled child seed."""

    return np.random.Generator(np.random.PCG64(derive_seed(seed, *labels)))


def truncated_normal(
    rng: np.random.Generator,
    shape: tuple[int, ...],
    std: float,
    *,
    bound: float = 2.0,
    dtype: np.dtype[np.floating] | type[np.floating] = np.float64,
) -> np.ndarray:
    """Normal(0, std) samples redrawn until they lie within ``bound`` standard deviations."""

    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return (out * std).astype(dtype)


__all__ = ["derive_seed", "make_rng", "truncated_normal"]
