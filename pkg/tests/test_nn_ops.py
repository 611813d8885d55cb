from __future__ import annotations

import itertools

import numpy as np
import pytest

from micformer.contracts.error import ShapeError
from micformer.core.tensor import Tensor
from micformer.nn import ops as N

pytestmark = pytest.mark.unit


def _rng(seed: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed)


def test_linear_identity_zero_input_and_oracle() -> None:
    x = _rng().standard_normal((2, 3, 4))
    eye = Tensor(np.eye(4))
    assert np.array_equal(N.linear(Tensor(x), eye, Tensor(np.zeros(4))).data, x)

    bias = np.array([0.5, -1.0, 2.0])
    out = N.linear(Tensor(np.zeros((5, 4))), Tensor(np.ones((4, 3))), Tensor(bias))
    assert np.array_equal(out.data, np.broadcast_to(bias, (5, 3)))

    w = _rng(1).standard_normal((4, 3))
    np.testing.assert_allclose(
        N.linear(Tensor(x), Tensor(w), Tensor(bias)).data, x @ w + bias, atol=1e-12
    )
    with pytest.raises(ShapeError):
        N.linear(Tensor(x), Tensor(np.ones((3, 3))))


def test_layer_norm_examples() -> None:
    ones, zeros = Tensor(np.ones(4)), Tensor(np.zeros(4))
    flat = N.layer_norm(Tensor(np.full((3, 4), 7.0)), ones, zeros)
    assert np.array_equal(flat.data, np.zeros((3, 4)))

    pair = N.layer_norm(Tensor([1.0, -1.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12)
    np.testing.assert_allclose(pair.data, [1.0, -1.0], atol=1e-9)


def test_layer_norm_matches_scalar_loop() -> None:
    x = _rng(2).standard_normal((5, 6))
    gamma = 1.0 + 0.1 * _rng(3).standard_normal(6)
    beta = 0.1 * _rng(4).standard_normal(6)
    expected = np.zeros_like(x)
    for r in range(x.shape[0]):
        row = list(x[r])
        mean = sum(row) / len(row)
        var = sum((v - mean) ** 2 for v in row) / len(row)
        for c, v in enumerate(row):
            expected[r, c] = (v - mean) / (var + 1e-5) ** 0.5 * gamma[c] + beta[c]
    out = N.layer_norm(Tensor(x), Tensor(gamma), Tensor(beta))
    np.testing.assert_allclose(out.data, expected, atol=1e-6)


def test_depthwise_separable_delta_kernel_is_identity() -> None:
    x = _rng(5).standard_normal((4, 5, 3, 2))
    delta = np.zeros((3, 3, 3, 2))
    delta[1, 1, 1, :] = 1.0
    kernel = N.ConvKernel3D(Tensor(delta), Tensor(np.eye(2)))
    np.testing.assert_allclose(N.depthwise_separable_conv3d(Tensor(x), kernel).data, x, atol=1e-15)


def test_zero_kernel_gives_bias() -> None:
    kernel = N.ConvKernel3D(
        Tensor(np.zeros((3, 3, 3, 2))), Tensor(np.zeros((2, 3))), Tensor([1.0, 2.0, 3.0])
    )
    out = N.depthwise_separable_conv3d(Tensor(_rng(6).standard_normal((3, 3, 3, 2))), kernel)
    assert np.array_equal(out.data, np.broadcast_to([1.0, 2.0, 3.0], (3, 3, 3, 3)))


def test_depthwise_separable_matches_naive_loops() -> None:
    x = _rng(7).standard_normal((6, 6, 6, 4))
    dw = _rng(8).standard_normal((3, 3, 3, 4))
    pw = _rng(9).standard_normal((4, 5))
    bias = _rng(10).standard_normal(5)
    padded = np.pad(x, ((1, 1), (1, 1), (1, 1), (0, 0)))
    mid = np.zeros_like(x)
    for z, y, w, c in itertools.product(range(6), range(6), range(6), range(4)):
        acc = 0.0
        for i, j, k in itertools.product(range(3), repeat=3):
            acc += padded[z + i, y + j, w + k, c] * dw[i, j, k, c]
        mid[z, y, w, c] = acc
    expected = mid @ pw + bias
    kernel = N.ConvKernel3D(Tensor(dw), Tensor(pw), Tensor(bias))
    np.testing.assert_allclose(
        N.depthwise_separable_conv3d(Tensor(x), kernel).data, expected, atol=1e-10
    )


def test_conv_kernel_rejects_bad_shapes() -> None:
    with pytest.raises(ShapeError):
        N.ConvKernel3D(Tensor(np.zeros((2, 2, 2, 3))), Tensor(np.zeros((3, 3))))
    with pytest.raises(ShapeError):
        N.ConvKernel3D(Tensor(np.zeros((3, 3, 3, 3))), Tensor(np.zeros((4, 3))))


def test_trilinear_identity_lattice_is_exact() -> None:
    x = _rng(11).standard_normal((3, 4, 5, 2))
    coords = N.identity_lattice((3, 4, 5))
    assert np.array_equal(N.trilinear_sample(Tensor(x), coords).data, x)


def test_trilinear_interpolates_along_x() -> None:
    line = Tensor(np.array([0.0, 1.0]).reshape(1, 1, 2, 1))
    mid = N.trilinear_sample(line, Tensor(np.array([0.5, 0.0, 0.0]).reshape(1, 1, 1, 3)))
    assert mid.item() == pytest.approx(0.5)

    pair = Tensor(np.array([4.0, 8.0]).reshape(1, 1, 2, 1))
    quarter = N.trilinear_sample(pair, Tensor(np.array([0.25, 0.0, 0.0]).reshape(1, 1, 1, 3)))
    assert quarter.item() == pytest.approx(5.0)


def test_trilinear_clamps_outside_the_volume() -> None:
    pair = Tensor(np.array([4.0, 8.0]).reshape(1, 1, 2, 1))
    far = N.trilinear_sample(pair, Tensor(np.array([9.0, -3.0, 2.0]).reshape(1, 1, 1, 3)))
    assert far.item() == pytest.approx(8.0)


@pytest.mark.parametrize("seed", range(5))
def test_trilinear_samples_stay_inside_the_value_range(seed: int) -> None:
    rng = _rng(40 + seed)
    x = rng.standard_normal((3, 4, 5, 2)) * 3.0
    extents = np.array([5.0, 4.0, 3.0])
    # x/y/z coordinates spread from below zero to well past the far face
    coords = rng.uniform(-0.5, 1.5, (2, 3, 4, 3)) * extents - 1.0
    out = N.trilinear_sample(Tensor(x), Tensor(coords)).data
    assert out.shape == (2, 3, 4, 2)
    lo = x.reshape(-1, 2).min(axis=0)
    hi = x.reshape(-1, 2).max(axis=0)
    assert np.all(out >= lo - 1e-12)
    assert np.all(out <= hi + 1e-12)


def test_patch_embed_shapes_and_oracle() -> None:
    vol = _rng(12).standard_normal((32, 32, 32))
    w = _rng(13).standard_normal((64, 24))
    b = _rng(14).standard_normal(24)
    tokens = N.patch_embed(Tensor(vol), Tensor(w), Tensor(b), 4)
    assert tokens.shape == (8, 8, 8, 24)
    block = vol[4:8, 0:4, 12:16].reshape(-1)
    np.testing.assert_allclose(tokens.data[1, 0, 3], block @ w + b, atol=1e-12)

    const = N.patch_embed(Tensor(np.full((8, 8, 8), 3.0)), Tensor(w), Tensor(b), 4)
    assert np.array_equal(const.data, np.broadcast_to(const.data[0, 0, 0], const.shape))

    with pytest.raises(ShapeError):
        N.patch_embed(Tensor(np.zeros((30, 32, 32))), Tensor(w), None, 4)


def test_patch_merge_and_expand_shapes() -> None:
    grid = Tensor(_rng(15).standard_normal((8, 8, 8, 24)))
    merged = N.patch_merge(grid, Tensor(_rng(16).standard_normal((192, 48))))
    assert merged.shape == (4, 4, 4, 48)
    expanded = N.patch_expand(merged, Tensor(_rng(17).standard_normal((48, 192))))
    assert expanded.shape == (8, 8, 8, 24)

    const = N.patch_merge(Tensor(np.full((4, 4, 4, 2), 1.5)), Tensor(_rng(18).standard_normal((16, 4))))
    assert np.array_equal(const.data, np.broadcast_to(const.data[0, 0, 0], const.shape))

    zero = N.patch_expand(Tensor(np.zeros((4, 4, 4, 48))), Tensor(_rng(19).standard_normal((48, 192))))
    assert not zero.data.any()


def test_patch_merge_matches_block_concatenation() -> None:
    x = _rng(20).standard_normal((4, 2, 2, 3))
    w = _rng(21).standard_normal((24, 5))
    out = N.patch_merge(Tensor(x), Tensor(w))
    children = x[2:4, 0:2, 0:2, :].reshape(-1)
    np.testing.assert_allclose(out.data[1, 0, 0], children @ w, atol=1e-12)


def test_final_expand_restores_voxel_resolution() -> None:
    x = Tensor(_rng(22).standard_normal((2, 2, 2, 8)))
    out = N.final_expand(x, Tensor(_rng(23).standard_normal((8, 64))), 2)
    assert out.shape == (4, 4, 4, 8)
    with pytest.raises(ShapeError):
        N.patch_expand(Tensor(np.zeros((2, 2, 2, 3))), Tensor(np.zeros((3, 12))))
