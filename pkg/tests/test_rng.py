from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from micformer.contracts.error import BadInputError
from micformer.core.rng import derive_seed, make_rng, truncated_normal

pytestmark = pytest.mark.unit


def test_labelled_streams_are_reproducible_and_distinct() -> None:
    a = make_rng(0, "init", "a.embed.weight").standard_normal(8)
    again = make_rng(0, "init", "a.embed.weight").standard_normal(8)
    other = make_rng(0, "init", "b.embed.weight").standard_normal(8)
    assert np.array_equal(a, again)
    assert not np.array_equal(a, other)


def test_int_and_str_labels_do_not_collide() -> None:
    assert derive_seed(1, 3) != derive_seed(1, "3")
    assert derive_seed(1, "ab", "c") != derive_seed(1, "a", "bc")


def test_seed_range_is_checked() -> None:
    with pytest.raises(BadInputError):
        derive_seed(-1)
    with pytest.raises(BadInputError):
        derive_seed(2**64)
    with pytest.raises(BadInputError):
        derive_seed(0, True)


@given(st.integers(0, 2**64 - 1), st.text(max_size=12))
def test_derived_seeds_fit_64_bits(seed: int, label: str) -> None:
    child = derive_seed(seed, label)
    assert 0 <= child < 2**64
    assert child == derive_seed(seed, label)


def test_truncated_normal_respects_bound() -> None:
    out = truncated_normal(make_rng(4, "t"), (2000,), 0.02, dtype=np.float32)
    assert out.dtype == np.float32
    assert np.max(np.abs(out)) <= 0.04 + 1e-8
    assert abs(float(out.std()) - 0.02) < 0.005
