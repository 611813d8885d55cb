from __future__ import annotations

import math

import numpy as np
import pytest

from micformer.contracts.error import ShapeError
from micformer.core.tensor import Tensor, concat
from micformer.nn import attention as A
from micformer.nn.ops import ConvKernel3D, depthwise_separable_conv3d

pytestmark = pytest.mark.unit


def _params(
    seed: int, c: int, heads: int, window: int, *, rel_std: float = 0.5
) -> A.AttentionParams:
    rng = np.random.default_rng(seed)

    def t(*shape: int, std: float = 0.5) -> Tensor:
        return Tensor(rng.standard_normal(shape) * std)

    return A.AttentionParams(
        wq=t(c, c),
        bq=t(c, std=0.1),
        wk=t(c, c),
        bk=t(c, std=0.1),
        wv=t(c, c),
        bv=t(c, std=0.1),
        wo=t(c, c),
        bo=t(c, std=0.1),
        rel_bias=t((2 * window - 1) ** 3, heads, std=rel_std),
        heads=heads,
    )


def _arrays(p: A.AttentionParams) -> dict[str, np.ndarray]:
    names = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "rel_bias")
    return {name: getattr(p, name).data for name in names}


def _dense_attention(
    q_src: np.ndarray, k_src: np.ndarray, v_src: np.ndarray, p: A.AttentionParams, window: int
) -> np.ndarray:
    """Per-window, per-head loops over the attention formula."""

    w = _arrays(p)
    heads, c = p.heads, q_src.shape[2]
    d = c // heads
    span = 2 * window - 1
    pos = [(i // (window * window), (i // window) % window, i % window) for i in range(window**3)]
    out = np.zeros_like(q_src)
    for n in range(q_src.shape[0]):
        q = q_src[n] @ w["wq"] + w["bq"]
        k = k_src[n] @ w["wk"] + w["bk"]
        v = v_src[n] @ w["wv"] + w["bv"]
        mixed = np.zeros((q.shape[0], c))
        for h in range(heads):
            cols = slice(h * d, (h + 1) * d)
            for i, pi in enumerate(pos):
                logits = np.empty(len(pos))
                for j, pj in enumerate(pos):
                    rel = [pi[a] - pj[a] + window - 1 for a in range(3)]
                    row = rel[0] * span * span + rel[1] * span + rel[2]
                    logits[j] = q[i, cols] @ k[j, cols] / math.sqrt(d) + w["rel_bias"][row, h]
                weights = np.exp(logits - logits.max())
                weights /= weights.sum()
                mixed[i, cols] = weights @ v[:, cols]
        out[n] = mixed @ w["wo"] + w["bo"]
    return out


def test_partition_counts_and_exact_inverse() -> None:
    x = Tensor(np.random.default_rng(0).standard_normal((8, 8, 8, 3)))
    ws = A.window_partition(x, 4)
    assert ws.windows.shape == (8, 64, 3)
    assert np.array_equal(A.window_reverse(ws).data, x.data)


def test_shifted_partition_covers_every_token_once() -> None:
    index = Tensor(np.arange(512, dtype=np.float64).reshape(8, 8, 8, 1))
    ws = A.window_partition(index, 4, shift=2)
    counts = np.bincount(ws.windows.data.reshape(-1).astype(np.int64), minlength=512)
    assert np.array_equal(counts, np.ones(512, dtype=np.int64))
    assert np.array_equal(A.window_reverse(ws).data, index.data)


def test_shifted_round_trip_and_zero_windows() -> None:
    x = Tensor(np.random.default_rng(1).standard_normal((4, 8, 4, 2)))
    assert np.array_equal(A.window_reverse(A.window_partition(x, 2, shift=1)).data, x.data)
    zeros = A.WindowSet(Tensor(np.zeros((8, 64, 3))), (8, 8, 8), 4, 0)
    assert not A.window_reverse(zeros).data.any()


def test_partition_rejects_bad_geometry() -> None:
    with pytest.raises(ShapeError):
        A.window_partition(Tensor(np.zeros((6, 8, 8, 2))), 4)
    with pytest.raises(ShapeError):
        A.window_partition(Tensor(np.zeros((8, 8, 8, 2))), 4, shift=1)


def test_relative_position_index_layout() -> None:
    index = A.relative_position_index(3)
    assert index.shape == (27, 27)
    centre = 2 * 25 + 2 * 5 + 2
    assert set(np.diag(index)) == {centre}
    assert index.max() < 125
    assert index[0, 26] == 0 and index[26, 0] == 124


def test_window_attention_matches_dense_loops() -> None:
    rng = np.random.default_rng(2)
    p = _params(3, 8, 2, 4)
    x = rng.standard_normal((2, 64, 8))
    out, attn = A.window_attention(Tensor(x), Tensor(x), Tensor(x), p, 4)
    np.testing.assert_allclose(out.data, _dense_attention(x, x, x, p, 4), atol=1e-10)
    np.testing.assert_allclose(attn.data.sum(axis=-1), 1.0, atol=1e-12)


def test_single_token_window_is_value_then_output_projection() -> None:
    p = _params(4, 4, 2, 1)
    x = np.random.default_rng(5).standard_normal((3, 1, 4))
    out, _ = A.window_attention(Tensor(x), Tensor(x), Tensor(x), p, 1)
    w = _arrays(p)
    np.testing.assert_allclose(out.data, (x @ w["wv"] + w["bv"]) @ w["wo"] + w["bo"], atol=1e-12)


def test_identical_tokens_give_identical_outputs() -> None:
    p = _params(6, 4, 2, 2)
    token = np.random.default_rng(7).standard_normal(4)
    x = np.broadcast_to(token, (1, 8, 4)).copy()
    out, _ = A.window_attention(Tensor(x), Tensor(x), Tensor(x), p, 2)
    np.testing.assert_allclose(out.data, np.broadcast_to(out.data[:, :1], out.shape), atol=1e-12)


def test_cross_attention_matches_loops_for_both_value_sources() -> None:
    rng = np.random.default_rng(8)
    p = _params(9, 8, 2, 2)
    a = Tensor(rng.standard_normal((4, 4, 4, 8)))
    b = Tensor(rng.standard_normal((4, 4, 4, 8)))
    wa, wb = A.window_partition(a, 2), A.window_partition(b, 2)
    qa, qb = wa.windows.data, wb.windows.data
    out_b = A.w_mca(wb, wa, p, "b").windows.data
    np.testing.assert_allclose(out_b, _dense_attention(qb, qa, qb, p, 2), atol=1e-10)
    out_a = A.w_mca(wb, wa, p, "a").windows.data
    np.testing.assert_allclose(out_a, _dense_attention(qb, qa, qa, p, 2), atol=1e-10)


def test_attention_rows_are_probability_vectors() -> None:
    rng = np.random.default_rng(30)
    p = _params(31, 8, 2, 2, rel_std=3.0)
    q = rng.standard_normal((3, 8, 8)) * 10.0
    k = rng.standard_normal((3, 8, 8)) * 10.0
    _, attn = A.window_attention(Tensor(q), Tensor(k), Tensor(q), p, 2)
    assert attn.shape == (3, 2, 8, 8)
    assert np.all(attn.data >= 0.0)
    np.testing.assert_allclose(attn.data.sum(axis=-1), 1.0, atol=1e-12)


@pytest.mark.parametrize("value_source", ["b", "a"])
def test_cross_attention_follows_a_token_permutation(value_source: str) -> None:
    rng = np.random.default_rng(32)
    p = _params(33, 8, 2, 2, rel_std=0.0)
    wa = A.window_partition(Tensor(rng.standard_normal((4, 4, 4, 8))), 2)
    wb = A.window_partition(Tensor(rng.standard_normal((4, 4, 4, 8))), 2)
    perm = rng.permutation(8)

    def shuffled(ws: A.WindowSet) -> A.WindowSet:
        return A.WindowSet(Tensor(ws.windows.data[:, perm]), ws.grid, ws.window, ws.shift)

    out = A.w_mca(wb, wa, p, value_source).windows.data
    moved = A.w_mca(shuffled(wb), shuffled(wa), p, value_source).windows.data
    np.testing.assert_allclose(moved, out[:, perm], atol=1e-12)


def test_cross_attention_with_constant_keys_averages_values() -> None:
    rng = np.random.default_rng(10)
    base = _params(11, 4, 2, 2)
    p = A.AttentionParams(
        base.wq,
        base.bq,
        Tensor(np.zeros((4, 4))),
        Tensor(np.zeros(4)),
        base.wv,
        base.bv,
        base.wo,
        base.bo,
        Tensor(np.zeros((27, 2))),
        2,
    )
    a = Tensor(rng.standard_normal((2, 2, 2, 4)))
    b = Tensor(rng.standard_normal((2, 2, 2, 4)))
    out = A.w_mca(A.window_partition(b, 2), A.window_partition(a, 2), p).windows.data
    w = _arrays(p)
    values = A.window_partition(b, 2).windows.data[0] @ w["wv"] + w["bv"]
    expected = values.mean(axis=0) @ w["wo"] + w["bo"]
    np.testing.assert_allclose(out[0], np.broadcast_to(expected, (8, 4)), atol=1e-12)


def test_cross_attention_needs_matching_geometry() -> None:
    p = _params(12, 4, 2, 2)
    wa = A.window_partition(Tensor(np.zeros((4, 4, 4, 4))), 2)
    wb = A.window_partition(Tensor(np.zeros((4, 4, 4, 4))), 2, shift=1)
    with pytest.raises(ShapeError):
        A.w_mca(wb, wa, p)
    with pytest.raises(ShapeError):
        A.w_mca(wa, wa, p, "c")


def _kernel(seed: int, c: int, *, zero: bool = False) -> ConvKernel3D:
    rng = np.random.default_rng(seed)
    pointwise = np.zeros((2 * c, 3)) if zero else rng.standard_normal((2 * c, 3)) * 0.05
    bias = np.zeros(3) if zero else np.array([0.3, -0.2, 0.1])
    return ConvKernel3D(
        Tensor(rng.standard_normal((3, 3, 3, 2 * c)) * 0.1), Tensor(pointwise), Tensor(bias)
    )


def test_offsets_zero_kernel_and_shape() -> None:
    a = Tensor(np.random.default_rng(13).standard_normal((4, 2, 4, 4)))
    b = Tensor(np.random.default_rng(14).standard_normal((4, 2, 4, 4)))
    off = A.predict_offsets(a, b, _kernel(15, 4, zero=True))
    assert off.shape == (4, 2, 4, 3)
    assert not off.data.any()

    kernel = _kernel(16, 4)
    expected = depthwise_separable_conv3d(concat([a, b], axis=-1), kernel).data
    np.testing.assert_allclose(A.predict_offsets(a, b, kernel).data, expected, atol=1e-12)


def test_deform_features_identity_ramp_and_midpoint() -> None:
    feat = Tensor(np.random.default_rng(17).standard_normal((3, 4, 5, 2)))
    same = A.deform_features(feat, Tensor(np.zeros((3, 4, 5, 3))))
    assert np.max(np.abs(same.data - feat.data)) < 1e-6

    ramp = np.broadcast_to(np.arange(4.0).reshape(1, 1, 4, 1), (2, 2, 4, 1)).copy()
    shift = np.zeros((2, 2, 4, 3))
    shift[..., 0] = 1.0
    moved = A.deform_features(Tensor(ramp), Tensor(shift)).data[..., 0]
    assert np.array_equal(moved[0, 0], [1.0, 2.0, 3.0, 3.0])

    pair = Tensor(np.array([0.0, 1.0]).reshape(1, 1, 2, 1))
    half = np.zeros((1, 1, 2, 3))
    half[..., 0] = 0.5
    assert A.deform_features(pair, Tensor(half)).data[0, 0, 0, 0] == pytest.approx(0.5)


def test_zero_offset_kernel_reduces_to_plain_cross_attention() -> None:
    rng = np.random.default_rng(18)
    p = _params(19, 4, 2, 2)
    a = Tensor(rng.standard_normal((4, 4, 4, 4)))
    b = Tensor(rng.standard_normal((4, 4, 4, 4)))
    deformed = A.deformable_cross_attention(a, b, p, _kernel(20, 4, zero=True), 2, 1)
    plain = A.deformable_cross_attention(a, b, p, None, 2, 1)
    assert np.array_equal(deformed.data, plain.data)


def test_single_token_single_window_lattice() -> None:
    rng = np.random.default_rng(21)
    p = _params(22, 4, 2, 1)
    a = Tensor(rng.standard_normal((1, 1, 1, 4)))
    b = Tensor(rng.standard_normal((1, 1, 1, 4)))
    out = A.deformable_cross_attention(a, b, p, _kernel(23, 4, zero=True), 1, 0)
    w = _arrays(p)
    expected = (b.data @ w["wv"] + w["bv"]) @ w["wo"] + w["bo"]
    np.testing.assert_allclose(out.data, expected, atol=1e-12)


def test_deformable_cross_attention_is_the_composition_of_its_parts() -> None:
    rng = np.random.default_rng(24)
    p = _params(25, 4, 2, 2)
    a = Tensor(rng.standard_normal((4, 4, 4, 4)))
    b = Tensor(rng.standard_normal((4, 4, 4, 4)))
    kernel = _kernel(26, 4)
    warped = A.deform_features(a, A.predict_offsets(a, b, kernel))
    chained = A.window_reverse(
        A.w_mca(A.window_partition(b, 2, 1), A.window_partition(warped, 2, 1), p)
    )
    fused = A.deformable_cross_attention(a, b, p, kernel, 2, 1)
    assert np.array_equal(fused.data, chained.data)


def test_shift_schedule() -> None:
    assert A.shift_for((8, 8, 8), 4, 0) == 0
    assert A.shift_for((8, 8, 8), 4, 1) == 2
    assert A.shift_for((4, 4, 4), 4, 1) == 0
