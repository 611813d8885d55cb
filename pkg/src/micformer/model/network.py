"""Dual-stream U-shaped segmentation network.

Stream ``a`` carries CT features, stream ``b`` MRI features. Each encoder and decoder
stage runs ``swin_block`` on both streams and then a ``cross_transformer_block``
in which ``b`` first queries ``a`` and ``a`` then queries the updated ``b``.
Parameters of the phase that updates stream ``s`` live under ``s.*.cross``.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass
from typing import Any

import numpy as np

from micformer.config import ModelConfig
from micformer.contracts.error import DataError, ShapeError
from micformer.core.tensor import Tensor, add, gelu
from micformer.nn.attention import (
    AttentionParams,
    deformable_cross_attention,
    shift_for,
    w_msa,
    window_partition,
    window_reverse,
)
from micformer.nn.ops import (
    ConvKernel3D,
    final_expand,
    layer_norm,
    linear,
    patch_embed,
    patch_expand,
    patch_merge,
)

Params = Mapping[str, Tensor]


def _get(params: Params, name: str) -> Tensor:
    try:
        return params[name]
    except KeyError:
        raise DataError(
            f"parameter {name!r} is missing from the store",
            hint="the store was built for a different model config",
        ) from None


def _norm(x: Tensor, params: Params, prefix: str) -> Tensor:
    return layer_norm(x, _get(params, f"{prefix}.gamma"), _get(params, f"{prefix}.beta"))


def _mlp(x: Tensor, params: Params, prefix: str) -> Tensor:
    hidden = gelu(linear(x, _get(params, f"{prefix}.fc1.weight"), _get(params, f"{prefix}.fc1.bias")))
    return linear(hidden, _get(params, f"{prefix}.fc2.weight"), _get(params, f"{prefix}.fc2.bias"))


def attention_params(params: Params, prefix: str, heads: int) -> AttentionParams:
    return AttentionParams(
        wq=_get(params, f"{prefix}.wq"),
        bq=_get(params, f"{prefix}.bq"),
        wk=_get(params, f"{prefix}.wk"),
        bk=_get(params, f"{prefix}.bk"),
        wv=_get(params, f"{prefix}.wv"),
        bv=_get(params, f"{prefix}.bv"),
        wo=_get(params, f"{prefix}.wo"),
        bo=_get(params, f"{prefix}.bo"),
        rel_bias=_get(params, f"{prefix}.rel_bias"),
        heads=heads,
    )


def offset_kernel(params: Params, prefix: str) -> ConvKernel3D | None:
    if f"{prefix}.depthwise" not in params:
        return None
    return ConvKernel3D(
        depthwise=_get(params, f"{prefix}.depthwise"),
        pointwise=_get(params, f"{prefix}.pointwise"),
        bias=_get(params, f"{prefix}.bias"),
    )


def swin_block(
    x: Tensor, params: Params, prefix: str, heads: int, window: int, shift: int
) -> Tensor:
    """Pre-norm block: ``x + W-MSA(norm(x))`` then ``x + MLP(norm(x))``."""

    ws = window_partition(_norm(x, params, f"{prefix}.norm1"), window, shift)
    x = add(x, window_reverse(w_msa(ws, attention_params(params, f"{prefix}.attn", heads))))
    return add(x, _mlp(_norm(x, params, f"{prefix}.norm2"), params, f"{prefix}.mlp"))


def _cross_phase(
    query: Tensor,
    key: Tensor,
    params: Params,
    prefix: str,
    heads: int,
    window: int,
    shift: int,
    value_source: str,
) -> Tensor:
    update = deformable_cross_attention(
        _norm(key, params, f"{prefix}.norm_k"),
        _norm(query, params, f"{prefix}.norm_q"),
        attention_params(params, f"{prefix}.attn", heads),
        offset_kernel(params, f"{prefix}.offset"),
        window,
        shift,
        value_source,
    )
    query = add(query, update)
    return add(query, _mlp(_norm(query, params, f"{prefix}.norm2"), params, f"{prefix}.mlp"))


def cross_transformer_block(
    a: Tensor,
    b: Tensor,
    params: Params,
    prefix_a: str,
    prefix_b: str,
    heads: int,
    window: int,
    shift: int,
    value_source: str = "b",
) -> tuple[Tensor, Tensor]:
    """Two sequential phases: ``b`` queries ``a``, then ``a`` queries the updated ``b``."""

    if a.shape != b.shape:
        raise ShapeError(f"cross block needs aligned grids: {a.shape} vs {b.shape}")
    b = _cross_phase(b, a, params, prefix_b, heads, window, shift, value_source)
    a = _cross_phase(a, b, params, prefix_a, heads, window, shift, value_source)
    return a, b


@dataclass(frozen=True)
class DualStreamState:
    """Encoder output per stage: ``(feature_a, feature_b)``; ``feature_b`` is None for one stream."""

    stages: tuple[tuple[Tensor, Tensor | None], ...]

    def __post_init__(self) -> None:
        for fa, fb in self.stages:
            if fb is not None and fa.shape != fb.shape:
                raise ShapeError(f"stage grids diverged: {fa.shape} vs {fb.shape}")


def _composite_stage(
    feats: dict[str, Tensor],
    params: Params,
    cfg: ModelConfig,
    section: str,
    stage: int,
    blocks: int,
) -> dict[str, Tensor]:
    heads, w = cfg.heads_at(stage), cfg.window
    grid = next(iter(feats.values())).shape
    for j in range(blocks):
        feats = {
            s: swin_block(x, params, f"{s}.{section}{stage}.{j}.swin", heads, w, shift_for(grid, w, 0))
            for s, x in feats.items()
        }
        if "a" in feats and "b" in feats:
            feats["a"], feats["b"] = cross_transformer_block(
                feats["a"],
                feats["b"],
                params,
                f"a.{section}{stage}.{j}.cross",
                f"b.{section}{stage}.{j}.cross",
                heads,
                w,
                shift_for(grid, w, 1),
                cfg.value_source,
            )
    return feats


def _to_input(volume: Any, cfg: ModelConfig) -> Tensor:
    raw = volume if isinstance(volume, np.ndarray) else getattr(volume, "data", volume)
    t = Tensor(np.asarray(raw), dtype=cfg.dtype)
    if t.ndim != 3:
        raise ShapeError(f"network input must be a [D, H, W] volume, got {t.shape}")
    cfg.check_extents(t.shape)
    return t


def _encode(inputs: dict[str, Tensor], params: Params, cfg: ModelConfig) -> list[dict[str, Tensor]]:
    feats = {
        s: patch_embed(v, _get(params, f"{s}.embed.weight"), _get(params, f"{s}.embed.bias"), cfg.patch)
        for s, v in inputs.items()
    }
    skips: list[dict[str, Tensor]] = []
    for i in range(cfg.stages):
        feats = _composite_stage(feats, params, cfg, "enc", i, cfg.blocks_per_stage)
        skips.append(dict(feats))
        if i < cfg.stages - 1:
            feats = {s: patch_merge(x, _get(params, f"{s}.merge{i}.weight")) for s, x in feats.items()}
    return skips


def _decode(skips: list[dict[str, Tensor]], params: Params, cfg: ModelConfig) -> dict[str, Tensor]:
    feats = dict(skips[-1])
    for i in range(cfg.stages - 2, -1, -1):
        feats = {
            s: add(patch_expand(x, _get(params, f"{s}.expand{i}.weight")), skips[i][s])
            for s, x in feats.items()
        }
        feats = _composite_stage(feats, params, cfg, "dec", i, cfg.decoder_blocks)
    return {
        s: gelu(
            add(
                final_expand(x, _get(params, f"{s}.final.weight"), cfg.patch),
                _get(params, f"{s}.final.bias"),
            )
        )
        for s, x in feats.items()
    }


def encode(ct: Any, mri: Any | None, params: Params, cfg: ModelConfig) -> DualStreamState:
    inputs = {"a": _to_input(ct, cfg)}
    if mri is not None:
        inputs["b"] = _to_input(mri, cfg)
        if inputs["b"].shape != inputs["a"].shape:
            raise ShapeError(
                f"CT and MRI extents differ: {inputs['a'].shape} vs {inputs['b'].shape}"
            )
    skips = _encode(inputs, params, cfg)
    return DualStreamState(tuple((s["a"], s.get("b")) for s in skips))


def seg_head(fa: Tensor, fb: Tensor | None, params: Params) -> Tensor:
    """``fa @ W_ct + fb @ W_mri + bias``; equal to projecting the channel concatenation."""

    if fa.ndim != 4 or (fb is not None and fb.shape != fa.shape):
        raise ShapeError("seg head needs full-resolution [D, H, W, C] grids of equal shape")
    logits = linear(fa, _get(params, "head.ct.weight"), _get(params, "head.bias"))
    if fb is not None:
        logits = add(logits, linear(fb, _get(params, "head.mri.weight")))
    return logits


def dual_stream_features(
    ct: Any, mri: Any, params: Params, cfg: ModelConfig
) -> tuple[Tensor, Tensor]:
    """Full-resolution features of both streams after the decoder."""

    state = encode(ct, mri, params, cfg)
    skips = [{"a": fa, "b": fb} for fa, fb in state.stages if fb is not None]
    if len(skips) != cfg.stages:
        raise ShapeError("dual-stream features need both modalities")
    out = _decode(skips, params, cfg)
    return out["a"], out["b"]


def single_stream_forward(volume: Any, params: Params, cfg: ModelConfig, stream: str = "a") -> Tensor:
    """One stream's full-resolution features with every cross block skipped."""

    if stream not in ("a", "b"):
        raise ShapeError(f"stream must be 'a' or 'b', got {stream!r}")
    skips = _encode({stream: _to_input(volume, cfg)}, params, cfg)
    return _decode(skips, params, cfg)[stream]


def micformer_forward(ct: Any, mri: Any | None, params: Params, cfg: ModelConfig) -> Tensor:
    """Logits ``[D, H, W, K]`` at input resolution; ``ct_only`` configs ignore ``mri``."""

    if not cfg.dual:
        return seg_head(single_stream_forward(ct, params, cfg, "a"), None, params)
    if mri is None:
        raise ShapeError("the dual-stream model needs an MRI volume")
    fa, fb = dual_stream_features(ct, mri, params, cfg)
    return seg_head(fa, fb, params)


__all__ = [
    "DualStreamState",
    "attention_params",
    "cross_transformer_block",
    "dual_stream_features",
    "encode",
    "micformer_forward",
    "offset_kernel",
    "seg_head",
    "single_stream_forward",
    "swin_block",
]
