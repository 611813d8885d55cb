"""Windowed self/cross attention and the deformable offset operator.

Cross attention follows the query/key/value split ``softmax(Q_b K_a^T / sqrt(d) + B) V``
where queries come from the stream being updated (``feat_b``), keys from the other
stream (``feat_a``) and values from ``feat_b`` unless ``value_source="a"``.
The key stream is resampled by a predicted offset field before windowing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from micformer.contracts.error import NumericError, ShapeError
from micformer.core.tensor import (
    Tensor,
    add,
    concat,
    matmul,
    reshape,
    roll,
    scale,
    softmax,
    take,
    transpose,
)

from .ops import ConvKernel3D, depthwise_separable_conv3d, identity_lattice, linear, trilinear_sample

VALUE_SOURCES = ("b", "a")


@dataclass(frozen=True)
class WindowSet:
    """Non-overlapping ``w^3`` windows of a token lattice: ``windows`` is ``[nW, w^3, C]``."""

    windows: Tensor
    grid: tuple[int, int, int]
    window: int
    shift: int

    def __post_init__(self) -> None:
        w = self.window
        tokens = self.grid[0] * self.grid[1] * self.grid[2]
        shape = self.windows.shape
        if len(shape) != 3 or shape[1] != w**3 or shape[0] * shape[1] != tokens:
            raise ShapeError(
                f"window set {shape} is inconsistent with lattice {self.grid} and window {w}"
            )
        if self.shift not in (0, w // 2):
            raise ShapeError(f"shift must be 0 or {w // 2}, got {self.shift}")

    @property
    def channels(self) -> int:
        return self.windows.shape[2]

    def same_geometry(self, other: WindowSet) -> bool:
        return (
            self.grid == other.grid
            and self.window == other.window
            and self.shift == other.shift
            and self.windows.shape == other.windows.shape
        )


def window_partition(x: Tensor, window: int, shift: int = 0) -> WindowSet:
    """Cyclically roll by ``-shift`` on every axis, then cut into ``window^3`` blocks."""

    if x.ndim != 4:
        raise ShapeError(f"token grid must be [D, H, W, C], got {x.shape}")
    d, h, w_, c = x.shape
    w = window
    if w < 1 or d % w or h % w or w_ % w:
        raise ShapeError(f"lattice extents {(d, h, w_)} are not divisible by window {w}")
    if shift not in (0, w // 2):
        raise ShapeError(f"shift must be 0 or {w // 2}, got {shift}")
    if shift:
        x = roll(x, (-shift, -shift, -shift), (0, 1, 2))
    blocks = reshape(x, (d // w, w, h // w, w, w_ // w, w, c))
    blocks = transpose(blocks, (0, 2, 4, 1, 3, 5, 6))
    windows = reshape(blocks, ((d // w) * (h // w) * (w_ // w), w**3, c))
    return WindowSet(windows=windows, grid=(d, h, w_), window=w, shift=shift)


def window_reverse(ws: WindowSet) -> Tensor:
    """Exact inverse of :func:`window_partition`, including the inverse roll."""

    d, h, w_ = ws.grid
    w = ws.window
    n_w, n_tok, c = ws.windows.shape
    if n_tok != w**3 or n_w != (d // w) * (h // w) * (w_ // w) or d % w or h % w or w_ % w:
        raise ShapeError(f"window set {ws.windows.shape} does not tile lattice {ws.grid}")
    blocks = reshape(ws.windows, (d // w, h // w, w_ // w, w, w, w, c))
    blocks = transpose(blocks, (0, 3, 1, 4, 2, 5, 6))
    x = reshape(blocks, (d, h, w_, c))
    if ws.shift:
        x = roll(x, (ws.shift, ws.shift, ws.shift), (0, 1, 2))
    return x


@lru_cache(maxsize=16)
def relative_position_index(window: int) -> np.ndarray:
    """``[w^3, w^3]`` row index into the ``(2w-1)^3`` relative-position bias table."""

    axis = np.arange(window)
    coords = np.stack(np.meshgrid(axis, axis, axis, indexing="ij")).reshape(3, -1)
    rel = coords[:, :, None] - coords[:, None, :] + (window - 1)
    span = 2 * window - 1
    index = rel[0] * span * span + rel[1] * span + rel[2]
    index.flags.writeable = False
    return index


@dataclass(frozen=True)
class AttentionParams:
    """Projections ``[C, C]`` for Q, K, V and output, plus the relative-position bias table."""

    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    rel_bias: Tensor
    heads: int

    def __post_init__(self) -> None:
        c = self.channels
        if self.heads < 1 or c % self.heads:
            raise ShapeError(f"{self.heads} heads do not divide {c} channels")
        for name in ("wq", "wk", "wv", "wo"):
            if getattr(self, name).shape != (c, c):
                raise ShapeError(f"{name} must be [{c}, {c}], got {getattr(self, name).shape}")
        if self.rel_bias.ndim != 2 or self.rel_bias.shape[1] != self.heads:
            raise ShapeError(f"relative bias table must be [rows, {self.heads}]")

    @property
    def channels(self) -> int:
        return self.wq.shape[0]

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads


def _split_heads(x: Tensor, heads: int) -> Tensor:
    n_w, n_tok, c = x.shape
    return transpose(reshape(x, (n_w, n_tok, heads, c // heads)), (0, 2, 1, 3))


def window_attention(
    query_src: Tensor,
    key_src: Tensor,
    value_src: Tensor,
    p: AttentionParams,
    window: int,
) -> tuple[Tensor, Tensor]:
    """Multi-head attention inside each window; returns ``(out [nW, N, C], attn [nW, h, N, N])``."""

    n_w, n_tok, c = query_src.shape
    if c != p.channels:
        raise ShapeError(f"window channels {c} do not match attention width {p.channels}")
    if n_tok != window**3 or p.rel_bias.shape[0] != (2 * window - 1) ** 3:
        raise ShapeError(
            f"relative bias table {p.rel_bias.shape} does not cover window {window}"
        )
    q = _split_heads(linear(query_src, p.wq, p.bq), p.heads)
    k = _split_heads(linear(key_src, p.wk, p.bk), p.heads)
    v = _split_heads(linear(value_src, p.wv, p.bv), p.heads)
    logits = scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(p.head_dim))
    bias = transpose(take(p.rel_bias, relative_position_index(window)), (2, 0, 1))
    attn = softmax(add(logits, bias), axis=-1)
    mixed = transpose(matmul(attn, v), (0, 2, 1, 3))
    out = linear(reshape(mixed, (n_w, n_tok, c)), p.wo, p.bo)
    return out, attn


def w_msa(x: WindowSet, p: AttentionParams) -> WindowSet:
    out, _ = window_attention(x.windows, x.windows, x.windows, p, x.window)
    return WindowSet(out, x.grid, x.window, x.shift)


def w_mca(
    feat_b: WindowSet, feat_a: WindowSet, p: AttentionParams, value_source: str = "b"
) -> WindowSet:
    """Cross attention: queries (and values by default) from ``feat_b``, keys from ``feat_a``."""

    if not feat_b.same_geometry(feat_a):
        raise ShapeError(
            "cross attention needs matching window geometry: "
            f"{feat_b.windows.shape}@{feat_b.grid}/shift {feat_b.shift} vs "
            f"{feat_a.windows.shape}@{feat_a.grid}/shift {feat_a.shift}"
        )
    if value_source not in VALUE_SOURCES:
        raise ShapeError(f"value_source must be 'b' or 'a', got {value_source!r}")
    values = feat_b.windows if value_source == "b" else feat_a.windows
    out, _ = window_attention(feat_b.windows, feat_a.windows, values, p, feat_b.window)
    return WindowSet(out, feat_b.grid, feat_b.window, feat_b.shift)


def _check_aligned(a: Tensor, b: Tensor) -> None:
    if a.ndim != 4 or a.shape != b.shape:
        raise ShapeError(f"feature grids must share extents and channels: {a.shape} vs {b.shape}")


def predict_offsets(feat_a: Tensor, feat_b: Tensor, kernel: ConvKernel3D) -> Tensor:
    """Per-voxel ``(x, y, z)`` displacement of the key stream, ``[D, H, W, 3]``."""

    _check_aligned(feat_a, feat_b)
    if kernel.out_channels != 3:
        raise ShapeError(f"offset kernel must emit 3 channels, got {kernel.out_channels}")
    return depthwise_separable_conv3d(concat([feat_a, feat_b], axis=-1), kernel)


def deform_features(feat_a: Tensor, off: Tensor) -> Tensor:
    """Resample ``feat_a`` at the identity lattice displaced by ``off`` (borders clamped)."""

    if feat_a.ndim != 4 or off.shape != (*feat_a.shape[:3], 3):
        raise ShapeError(f"offset field {off.shape} does not match feature grid {feat_a.shape}")
    if not np.all(np.isfinite(off.data)):
        raise NumericError("offset field contains non-finite values")
    lattice = identity_lattice(feat_a.shape[:3], dtype=off.dtype)
    return trilinear_sample(feat_a, add(lattice, off))


def deformable_cross_attention(
    feat_a: Tensor,
    feat_b: Tensor,
    p: AttentionParams,
    kernel: ConvKernel3D | None,
    window: int,
    shift: int,
    value_source: str = "b",
) -> Tensor:
    """``feat_b`` queries a deformed ``feat_a`` inside shared windows; returns a token grid.

    With ``kernel=None`` the key stream is used as is (the frozen-offset ablation).
    """

    _check_aligned(feat_a, feat_b)
    if kernel is not None:
        off = predict_offsets(feat_a, feat_b, kernel)
        feat_a = deform_features(feat_a, off)
    wa = window_partition(feat_a, window, shift)
    wb = window_partition(feat_b, window, shift)
    return window_reverse(w_mca(wb, wa, p, value_source))


def shift_for(grid: tuple[int, ...], window: int, phase: int) -> int:
    """Alternating shift schedule: even phases 0, odd phases ``w/2``; 0 when a single window spans an axis."""

    if phase % 2 == 0 or min(grid[:3]) <= window:
        return 0
    return window // 2


__all__ = [
    "AttentionParams",
    "VALUE_SOURCES",
    "WindowSet",
    "deform_features",
    "deformable_cross_attention",
    "predict_offsets",
    "relative_position_index",
    "shift_for",
    "w_mca",
    "w_msa",
    "window_attention",
    "window_partition",
    "window_reverse",
]
