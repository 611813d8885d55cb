"""Wall-clock timings of the network and the cross-attention kernels."""

from __future__ import annotations

import logging
import time
from collections.abc import Callable
from typing import Any

import numpy as np

from micformer.config import AppConfig
from micformer.contracts.error import BadInputError
from micformer.core.rng import make_rng
from micformer.core.tensor import Tape, Tensor, reduce
from micformer.metrics.constants import BENCH_SCHEMA
from micformer.model.network import micformer_forward
from micformer.model.params import count_parameters, init_params
from micformer.nn.attention import AttentionParams, deformable_cross_attention
from micformer.nn.ops import ConvKernel3D

logger = logging.getLogger("micformer")

DEFAULT_REPEATS = 3


def _time(fn: Callable[[], Any], repeats: int) -> dict[str, float]:
    samples: list[float] = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - start)
    return {"best_s": min(samples), "mean_s": float(np.mean(samples))}


def _cross_inputs(cfg: AppConfig, edge: int) -> tuple[Tensor, Tensor, AttentionParams, ConvKernel3D]:
    m = cfg.model
    c, heads, w = m.channels_at(0), m.heads_at(0), m.window
    grid = m.lattice_extents((edge, edge, edge), 0)
    rng = make_rng(m.seed, "bench", "cross")
    dt = m.dtype

    def t(*shape: int, std: float = 0.02) -> Tensor:
        return Tensor(rng.standard_normal(shape) * std, dtype=dt)

    p = AttentionParams(
        t(c, c), t(c), t(c, c), t(c), t(c, c), t(c), t(c, c), t(c), t((2 * w - 1) ** 3, heads), heads
    )
    kernel = ConvKernel3D(t(3, 3, 3, 2 * c), t(2 * c, 3), t(3))
    return t(*grid, c, std=1.0), t(*grid, c, std=1.0), p, kernel


def run_bench(cfg: AppConfig, *, repeats: int = DEFAULT_REPEATS, edge: int | None = None) -> dict[str, Any]:
    """Time forward, backward and both cross-attention paths on an ``edge^3`` input.

    ``edge`` defaults to the smallest extent the config accepts.
    """

    cfg.validate()
    if repeats < 1:
        raise BadInputError("bench needs at least one repeat")
    m = cfg.model
    size = edge if edge is not None else m.multiple
    m.check_extents((size, size, size))
    rng = make_rng(m.seed, "bench", "volume")
    ct = rng.standard_normal((size, size, size)).astype(np.float32)
    mri = rng.standard_normal((size, size, size)).astype(np.float32)
    params = init_params(m)

    def forward() -> Tensor:
        return micformer_forward(ct, mri, params, m)

    taped: dict[str, Any] = {}

    def record() -> None:
        tape = Tape()
        with tape:
            watched = {n: tape.watch(n, p) for n, p in params.items()}
            taped["loss"] = reduce("mean", micformer_forward(ct, mri, watched, m))
        taped["tape"] = tape

    def backward() -> None:
        record()
        taped["tape"].backward(taped["loss"])

    feat_a, feat_b, attn, kernel = _cross_inputs(cfg, size)
    w = m.window

    kernels = [
        ("forward", forward, [size, size, size]),
        ("forward_backward", backward, [size, size, size]),
        (
            "cross_attention_deformable",
            lambda: deformable_cross_attention(feat_a, feat_b, attn, kernel, w, 0, m.value_source),
            list(feat_a.shape),
        ),
        (
            "cross_attention_plain",
            lambda: deformable_cross_attention(feat_a, feat_b, attn, None, w, 0, m.value_source),
            list(feat_a.shape),
        ),
    ]
    entries: list[dict[str, Any]] = []
    for name, fn, shape in kernels:
        timing = _time(fn, repeats)
        logger.info("bench %s best=%.4fs mean=%.4fs", name, timing["best_s"], timing["mean_s"])
        entries.append({"name": name, "shape": shape, "repeats": repeats, **timing})

    return {
        "schema": BENCH_SCHEMA,
        "edge": size,
        "parameters": count_parameters(params),
        "config": cfg.to_flat(),
        "kernels": entries,
    }


def format_bench(report: dict[str, Any]) -> str:
    lines = [f"edge={report['edge']} parameters={report['parameters']}"]
    for k in report["kernels"]:
        lines.append(f"{k['name']:<28} best {k['best_s'] * 1e3:9.2f} ms  mean {k['mean_s'] * 1e3:9.2f} ms")
    return "\n".join(lines)


__all__ = ["DEFAULT_REPEATS", "format_bench", "run_bench"]
