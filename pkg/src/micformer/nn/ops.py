"""Neural building blocks over channel-last token grids ``[D, H, W, C]``."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from micformer.contracts.error import NumericError, ShapeError
from micformer.core.tensor import (
    Tensor,
    add,
    apply_op,
    matmul,
    reshape,
    transpose,
)

# Coordinate channel order of sampling grids and offset fields: (x, y, z) -> (W, H, D) axes.
COORD_AXES = (2, 1, 0)


def _check_grid(x: Tensor, name: str = "token grid") -> None:
    if x.ndim != 4:
        raise ShapeError(f"{name} must have shape [D, H, W, C], got {x.shape}")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map along the last axis; ``weight`` is ``[in, out]``."""

    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear shape mismatch: x {x.shape} with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeError(f"linear bias must have shape ({weight.shape[1]},), got {bias.shape}")
    lead = x.shape[:-1]
    flat = reshape(x, (-1, x.shape[-1])) if x.ndim != 2 else x
    out = matmul(flat, weight)
    if bias is not None:
        out = add(out, bias)
    return reshape(out, (*lead, weight.shape[1])) if x.ndim != 2 else out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardise over the channel axis, then scale by ``gamma`` and shift by ``beta``."""

    channels = x.shape[-1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(
            f"layer_norm expects gamma/beta of shape ({channels},), got {gamma.shape}/{beta.shape}"
        )
    if eps <= 0:
        raise ShapeError("layer_norm eps must be > 0")
    v = x.data
    centered = v - v.mean(axis=-1, keepdims=True)
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    gv = gamma.data
    out = xhat * gv + beta.data
    lead = tuple(range(x.ndim - 1))

    def _backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        gxhat = g * gv
        gx = inv * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return apply_op("layer_norm", out, (x, gamma, beta), _backward)


@dataclass(frozen=True)
class ConvKernel3D:
    """Depthwise ``[k, k, k, C]`` filter followed by pointwise ``[C, out]`` mixing."""

    depthwise: Tensor
    pointwise: Tensor
    bias: Tensor | None = None

    def __post_init__(self) -> None:
        dw = self.depthwise.shape
        if len(dw) != 4 or not dw[0] == dw[1] == dw[2]:
            raise ShapeError(f"depthwise kernel must be [k, k, k, C], got {dw}")
        if dw[0] % 2 == 0:
            raise ShapeError(f"kernel edge must be odd, got {dw[0]}")
        if self.pointwise.ndim != 2 or self.pointwise.shape[0] != dw[3]:
            raise ShapeError(
                f"pointwise weights {self.pointwise.shape} do not match {dw[3]} depthwise channels"
            )
        if self.bias is not None and self.bias.shape != (self.pointwise.shape[1],):
            raise ShapeError(f"conv bias must have shape ({self.pointwise.shape[1]},)")

    @property
    def k(self) -> int:
        return self.depthwise.shape[0]

    @property
    def in_channels(self) -> int:
        return self.depthwise.shape[3]

    @property
    def out_channels(self) -> int:
        return self.pointwise.shape[1]


def depthwise_conv3d(x: Tensor, weight: Tensor) -> Tensor:
    """Per-channel 3D cross-correlation, stride 1, symmetric zero padding."""

    _check_grid(x)
    k = weight.shape[0]
    if weight.shape != (k, k, k, x.shape[3]):
        raise ShapeError(f"depthwise weight {weight.shape} does not match input {x.shape}")
    if k % 2 == 0:
        raise ShapeError(f"kernel edge must be odd, got {k}")
    pad = (k - 1) // 2
    d, h, w, _ = x.shape
    xp = np.pad(x.data, ((pad, pad), (pad, pad), (pad, pad), (0, 0)))
    wv = weight.data
    offsets = list(itertools.product(range(k), repeat=3))
    out = np.zeros(x.shape, dtype=x.dtype)
    for i, j, m in offsets:
        out += xp[i : i + d, j : j + h, m : m + w, :] * wv[i, j, m]

    def _backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        gw = np.zeros(wv.shape, dtype=g.dtype)
        for i, j, m in offsets:
            window = (slice(i, i + d), slice(j, j + h), slice(m, m + w))
            gxp[window] += g * wv[i, j, m]
            gw[i, j, m] = (xp[window] * g).sum(axis=(0, 1, 2))
        return gxp[pad : pad + d, pad : pad + h, pad : pad + w, :], gw

    return apply_op("depthwise_conv3d", out, (x, weight), _backward)


def depthwise_separable_conv3d(x: Tensor, kernel: ConvKernel3D) -> Tensor:
    _check_grid(x)
    if x.shape[3] != kernel.in_channels:
        raise ShapeError(
            f"conv channel mismatch: input has {x.shape[3]}, kernel expects {kernel.in_channels}"
        )
    return linear(depthwise_conv3d(x, kernel.depthwise), kernel.pointwise, kernel.bias)


def _axis_weights(
    coord: np.ndarray, extent: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    clamped = np.clip(coord, 0, extent - 1)
    inside = ((coord >= 0) & (coord <= extent - 1)).astype(coord.dtype)
    i0 = np.clip(np.floor(clamped), 0, max(extent - 2, 0)).astype(np.intp)
    i1 = np.minimum(i0 + 1, extent - 1)
    frac = clamped - i0
    return i0, i1, frac, inside


def trilinear_sample(x: Tensor, coords: Tensor) -> Tensor:
    """Sample ``x`` at continuous voxel coordinates ``coords[..., (x, y, z)]``.

    Coordinates are clamped to ``[0, extent - 1]`` per axis, so gradients w.r.t. a
    coordinate vanish once it leaves the volume.
    """

    _check_grid(x)
    if coords.ndim != 4 or coords.shape[3] != 3:
        raise ShapeError(f"sampling coordinates must be [D, H, W, 3], got {coords.shape}")
    cv = coords.data
    if not np.all(np.isfinite(cv)):
        raise NumericError("sampling coordinates contain non-finite values")
    d, h, w, c = x.shape
    src = x.data.reshape(-1, c)
    z0, z1, tz, mz = _axis_weights(cv[..., 2], d)
    y0, y1, ty, my = _axis_weights(cv[..., 1], h)
    x0, x1, tx, mx = _axis_weights(cv[..., 0], w)
    corners = []
    for iz, wz, sz in ((z0, 1.0 - tz, -1.0), (z1, tz, 1.0)):
        for iy, wy, sy in ((y0, 1.0 - ty, -1.0), (y1, ty, 1.0)):
            for ix, wx, sx in ((x0, 1.0 - tx, -1.0), (x1, tx, 1.0)):
                flat = (iz * h + iy) * w + ix
                corners.append((flat, wz, wy, wx, sz, sy, sx))
    out = np.zeros((*cv.shape[:3], c), dtype=x.dtype)
    for flat, wz, wy, wx, *_ in corners:
        out += (wz * wy * wx)[..., None] * src[flat]

    def _backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        gsrc = np.zeros(src.shape, dtype=g.dtype)
        gc = np.zeros(cv.shape, dtype=g.dtype)
        for flat, wz, wy, wx, sz, sy, sx in corners:
            np.add.at(gsrc, flat.reshape(-1), ((wz * wy * wx)[..., None] * g).reshape(-1, c))
            dot = (g * src[flat]).sum(axis=-1)
            gc[..., 0] += sx * wz * wy * dot
            gc[..., 1] += sy * wz * wx * dot
            gc[..., 2] += sz * wy * wx * dot
        gc[..., 0] *= mx
        gc[..., 1] *= my
        gc[..., 2] *= mz
        return gsrc.reshape(x.shape), gc

    return apply_op("trilinear_sample", out, (x, coords), _backward)


def identity_lattice(extents: tuple[int, int, int], dtype: np.dtype | type = np.float64) -> Tensor:
    """Coordinates ``(x, y, z)`` of every voxel of a ``[D, H, W]`` lattice."""

    zz, yy, xx = np.meshgrid(*(np.arange(e) for e in extents), indexing="ij")
    return Tensor(np.stack([xx, yy, zz], axis=-1), dtype=np.dtype(dtype))


def _fold_blocks(x: Tensor, factor: int) -> Tensor:
    """``[D, H, W, C]`` -> ``[D/f, H/f, W/f, f^3 * C]`` (block-major channel order)."""

    d, h, w, c = x.shape
    f = factor
    if d % f or h % f or w % f:
        raise ShapeError(f"lattice extents {x.shape[:3]} are not divisible by {f}")
    blocks = reshape(x, (d // f, f, h // f, f, w // f, f, c))
    blocks = transpose(blocks, (0, 2, 4, 1, 3, 5, 6))
    return reshape(blocks, (d // f, h // f, w // f, f * f * f * c))


def _unfold_blocks(x: Tensor, factor: int) -> Tensor:
    """Inverse of :func:`_fold_blocks`."""

    d, h, w, c = x.shape
    f = factor
    if c % (f**3):
        raise ShapeError(f"channel count {c} is not divisible by {f ** 3}")
    out_c = c // (f**3)
    blocks = reshape(x, (d, h, w, f, f, f, out_c))
    blocks = transpose(blocks, (0, 3, 1, 4, 2, 5, 6))
    return reshape(blocks, (d * f, h * f, w * f, out_c))


def patch_embed(volume: Tensor, weight: Tensor, bias: Tensor | None, patch: int) -> Tensor:
    """Project each non-overlapping ``patch^3`` block of a ``[D, H, W]`` volume to C channels."""

    if volume.ndim != 3:
        raise ShapeError(f"patch_embed expects a [D, H, W] volume, got {volume.shape}")
    if any(e % patch for e in volume.shape):
        raise ShapeError(f"volume extents {volume.shape} are not divisible by patch {patch}")
    if weight.shape[0] != patch**3:
        raise ShapeError(f"embed weight {weight.shape} does not match patch {patch}")
    grid = reshape(volume, (*volume.shape, 1))
    return linear(_fold_blocks(grid, patch), weight, bias)


def patch_merge(x: Tensor, weight: Tensor) -> Tensor:
    """``[D, H, W, C]`` -> ``[D/2, H/2, W/2, 2C]`` via 2^3 concatenation and projection."""

    _check_grid(x)
    if any(e % 2 for e in x.shape[:3]):
        raise ShapeError(f"patch_merge needs even extents, got {x.shape[:3]}")
    return linear(_fold_blocks(x, 2), weight)


def patch_expand(x: Tensor, weight: Tensor) -> Tensor:
    """``[D, H, W, C]`` -> ``[2D, 2H, 2W, C/2]``; exact inverse of the merge shape map."""

    _check_grid(x)
    if x.shape[3] % 2:
        raise ShapeError(f"patch_expand needs an even channel count, got {x.shape[3]}")
    if weight.shape != (x.shape[3], 4 * x.shape[3]):
        raise ShapeError(f"expand weight must be [C, 4C], got {weight.shape}")
    return _unfold_blocks(linear(x, weight), 2)


def final_expand(x: Tensor, weight: Tensor, patch: int) -> Tensor:
    """Undo the stem: ``[D, H, W, C]`` -> ``[pD, pH, pW, weight_out / p^3]``."""

    _check_grid(x)
    return _unfold_blocks(linear(x, weight), patch)


__all__ = [
    "COORD_AXES",
    "ConvKernel3D",
    "depthwise_conv3d",
    "depthwise_separable_conv3d",
    "final_expand",
    "identity_lattice",
    "layer_norm",
    "linear",
    "patch_embed",
    "patch_expand",
    "patch_merge",
    "trilinear_sample",
]
