"""Central finite-difference checks for every differentiable op, in float64."""

from __future__ import annotations

import logging
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np

from micformer.contracts.error import BadInputError
from micformer.core import tensor as T
from micformer.core.rng import make_rng
from micformer.core.tensor import Tape, Tensor
from micformer.metrics.constants import GRADCHECK_SCHEMA
from micformer.nn import attention as A
from micformer.nn import ops as N
from micformer.training.loss import seg_loss

logger = logging.getLogger("micformer")

STEP = 1e-5
TOLERANCE = 1e-4
DEFAULT_TRIALS = 5
# entries checked per input tensor; smaller inputs are checked exhaustively
MAX_CHECKED = 24
# relative error denominator floor, so vanishing gradients are compared absolutely
REL_FLOOR = 1e-3

Inputs = dict[str, np.ndarray]
Fn = Callable[[Mapping[str, Tensor]], Tensor]


@dataclass(frozen=True)
class GradCase:
    inputs: Inputs
    fn: Fn


Builder = Callable[[np.random.Generator], GradCase]


def _n(rng: np.random.Generator, *shape: int, std: float = 1.0) -> np.ndarray:
    return rng.standard_normal(shape) * std


def _away_from_zero(rng: np.random.Generator, *shape: int) -> np.ndarray:
    return rng.uniform(0.5, 2.0, shape) * rng.choice([-1.0, 1.0], shape)


def _fractional_coords(rng: np.random.Generator, lead: tuple[int, ...], extents_xyz: tuple[int, int, int]) -> np.ndarray:
    # integer part in [0, e-2], fractional part in [0.2, 0.8]: away from every kink
    cols = [rng.integers(0, e - 1, lead) + rng.uniform(0.2, 0.8, lead) for e in extents_xyz]
    return np.stack(cols, axis=-1)


def _attention(p: Mapping[str, Tensor], heads: int) -> A.AttentionParams:
    return A.AttentionParams(
        p["wq"], p["bq"], p["wk"], p["bk"], p["wv"], p["bv"], p["wo"], p["bo"], p["rel_bias"], heads
    )


def _attention_inputs(rng: np.random.Generator, c: int, window: int, heads: int) -> Inputs:
    out: Inputs = {}
    for name in ("wq", "wk", "wv", "wo"):
        out[name] = _n(rng, c, c, std=0.5)
    for name in ("bq", "bk", "bv", "bo"):
        out[name] = _n(rng, c, std=0.1)
    out["rel_bias"] = _n(rng, (2 * window - 1) ** 3, heads, std=0.5)
    return out


def _window_attention(rng: np.random.Generator) -> GradCase:
    c, window, heads = 4, 2, 2
    inputs = {"q": _n(rng, 2, 8, c), "k": _n(rng, 2, 8, c), "v": _n(rng, 2, 8, c)}
    inputs.update(_attention_inputs(rng, c, window, heads))

    def fn(x: Mapping[str, Tensor]) -> Tensor:
        return A.window_attention(x["q"], x["k"], x["v"], _attention(x, heads), window)[0]

    return GradCase(inputs, fn)


def _deformable(rng: np.random.Generator) -> GradCase:
    c, window, heads = 4, 2, 2
    inputs = {"feat_a": _n(rng, 4, 4, 4, c), "feat_b": _n(rng, 4, 4, 4, c)}
    inputs.update(_attention_inputs(rng, c, window, heads))
    inputs["depthwise"] = _n(rng, 3, 3, 3, 2 * c, std=0.1)
    inputs["pointwise"] = _n(rng, 2 * c, 3, std=0.02)
    # constant sub-voxel displacement keeps sample points off the lattice
    inputs["offset_bias"] = np.array([0.37, 0.41, 0.29])

    def fn(x: Mapping[str, Tensor]) -> Tensor:
        kernel = N.ConvKernel3D(x["depthwise"], x["pointwise"], x["offset_bias"])
        return A.deformable_cross_attention(
            x["feat_a"], x["feat_b"], _attention(x, heads), kernel, window, 1
        )

    return GradCase(inputs, fn)


def _unary(fn: Callable[[Tensor], Tensor], sample: Callable[[np.random.Generator], np.ndarray]) -> Builder:
    return lambda rng: GradCase({"x": sample(rng)}, lambda x: fn(x["x"]))


def _binary(
    fn: Callable[[Tensor, Tensor], Tensor],
    a: tuple[int, ...],
    b: tuple[int, ...],
    sample_b: Callable[[np.random.Generator, tuple[int, ...]], np.ndarray] | None = None,
) -> Builder:
    def build(rng: np.random.Generator) -> GradCase:
        rhs = sample_b(rng, b) if sample_b is not None else _n(rng, *b)
        return GradCase({"a": _n(rng, *a), "b": rhs}, lambda x: fn(x["a"], x["b"]))

    return build


def _take(rng: np.random.Generator) -> GradCase:
    index = rng.integers(0, 7, (4, 5))
    return GradCase({"table": _n(rng, 7, 3)}, lambda x: T.take(x["table"], index))


def _trilinear(rng: np.random.Generator) -> GradCase:
    # grid [D, H, W, C] = [3, 4, 5, 2]; coords are (x, y, z) = (W, H, D) order
    inputs = {"x": _n(rng, 3, 4, 5, 2), "coords": _fractional_coords(rng, (2, 3), (5, 4, 3))}
    return GradCase(inputs, lambda x: N.trilinear_sample(x["x"], x["coords"]))


def _seg_loss(rng: np.random.Generator) -> GradCase:
    labels = rng.integers(0, 4, (2, 2, 3))
    labels[0, 0, 0] = 1
    return GradCase({"logits": _n(rng, 2, 2, 3, 4)}, lambda x: seg_loss(x["logits"], labels))


def _layer_norm(rng: np.random.Generator) -> GradCase:
    inputs = {"x": _n(rng, 3, 6), "gamma": 1.0 + _n(rng, 6, std=0.2), "beta": _n(rng, 6, std=0.2)}
    return GradCase(inputs, lambda x: N.layer_norm(x["x"], x["gamma"], x["beta"]))


def _ds_conv(rng: np.random.Generator) -> GradCase:
    inputs = {
        "x": _n(rng, 3, 4, 3, 2),
        "depthwise": _n(rng, 3, 3, 3, 2, std=0.3),
        "pointwise": _n(rng, 2, 3, std=0.5),
        "bias": _n(rng, 3, std=0.1),
    }

    def fn(x: Mapping[str, Tensor]) -> Tensor:
        return N.depthwise_separable_conv3d(
            x["x"], N.ConvKernel3D(x["depthwise"], x["pointwise"], x["bias"])
        )

    return GradCase(inputs, fn)


OPS: dict[str, Builder] = {
    "add": _binary(T.add, (3, 4), (4,)),
    "sub": _binary(T.sub, (3, 4), (3, 4)),
    "mul": _binary(T.mul, (2, 3, 4), (3, 4)),
    "scale": _unary(lambda t: T.scale(t, 1.7), lambda r: _n(r, 5)),
    "neg": _unary(T.neg, lambda r: _n(r, 5)),
    "gelu": _unary(T.gelu, lambda r: _n(r, 4, 5)),
    "exp": _unary(T.exp, lambda r: _n(r, 4, 5, std=0.5)),
    "sqrt": _unary(T.sqrt, lambda r: r.uniform(0.5, 2.0, (4, 5))),
    "reciprocal": _unary(T.reciprocal, lambda r: _away_from_zero(r, 4, 5)),
    "matmul": _binary(T.matmul, (2, 3, 4), (4, 5)),
    "softmax": _unary(lambda t: T.softmax(t, axis=-1), lambda r: _n(r, 3, 5)),
    "log_softmax": _unary(lambda t: T.log_softmax(t, axis=-1), lambda r: _n(r, 3, 5)),
    "sum": _unary(lambda t: T.reduce("sum", t, 1), lambda r: _n(r, 3, 4, 2)),
    "mean": _unary(lambda t: T.reduce("mean", t, (0, 2)), lambda r: _n(r, 3, 4, 2)),
    "max": _unary(lambda t: T.reduce("max", t, 1), lambda r: _n(r, 3, 6)),
    "reshape": _unary(lambda t: T.reshape(t, (4, -1)), lambda r: _n(r, 2, 3, 4)),
    "transpose": _unary(lambda t: T.transpose(t, (2, 0, 1)), lambda r: _n(r, 2, 3, 4)),
    "concat": _binary(lambda a, b: T.concat([a, b], axis=1), (2, 3), (2, 4)),
    "roll": _unary(lambda t: T.roll(t, (1, -2), (0, 1)), lambda r: _n(r, 3, 4)),
    "take": _take,
    "linear": _binary(lambda a, b: N.linear(a, b), (2, 3, 4), (4, 5)),
    "layer_norm": _layer_norm,
    "depthwise_conv3d": _binary(N.depthwise_conv3d, (3, 4, 3, 2), (3, 3, 3, 2)),
    "ds_conv3d": _ds_conv,
    "trilinear_sample": _trilinear,
    "patch_embed": _binary(lambda a, b: N.patch_embed(a, b, None, 2), (4, 2, 4), (8, 3)),
    "patch_merge": _binary(N.patch_merge, (2, 2, 4, 2), (16, 3)),
    "patch_expand": _binary(N.patch_expand, (1, 2, 1, 4), (4, 16)),
    "final_expand": _binary(lambda a, b: N.final_expand(a, b, 2), (1, 1, 2, 3), (3, 16)),
    "window_attention": _window_attention,
    "deformable_cross_attention": _deformable,
    "seg_loss": _seg_loss,
}


def _checked_indices(rng: np.random.Generator, size: int) -> np.ndarray:
    if size <= MAX_CHECKED:
        return np.arange(size)
    return np.sort(rng.choice(size, MAX_CHECKED, replace=False))


def check_case(case: GradCase, rng: np.random.Generator, *, step: float = STEP) -> float:
    """Largest relative gap between taped and finite-difference gradients."""

    inputs = {k: np.asarray(v, dtype=np.float64) for k, v in case.inputs.items()}
    weights = rng.standard_normal(case.fn({k: Tensor(v) for k, v in inputs.items()}).shape)

    def scalar(values: Inputs) -> float:
        out = case.fn({k: Tensor(v) for k, v in values.items()})
        return float(np.sum(out.data * weights))

    with Tape() as tape:
        watched = {k: tape.watch(k, Tensor(v)) for k, v in inputs.items()}
        loss = T.reduce("sum", T.mul(case.fn(watched), Tensor(weights)))
        grads = tape.backward(loss)

    worst = 0.0
    for name, arr in inputs.items():
        analytic = grads[name].data.reshape(-1)
        for idx in _checked_indices(rng, arr.size):
            plus, minus = arr.copy(), arr.copy()
            plus.reshape(-1)[idx] += step
            minus.reshape(-1)[idx] -= step
            numeric = (scalar({**inputs, name: plus}) - scalar({**inputs, name: minus})) / (2 * step)
            a = float(analytic[idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), REL_FLOOR)
            worst = max(worst, err)
    return worst


def resolve_ops(selection: str | Sequence[str]) -> list[str]:
    names = list(OPS) if selection == "all" else (
        [selection] if isinstance(selection, str) else list(selection)
    )
    unknown = [n for n in names if n not in OPS]
    if unknown:
        raise BadInputError(
            f"unknown op {unknown[0]!r}", hint=f"choose 'all' or one of: {', '.join(OPS)}"
        )
    return names


def run_gradcheck(
    selection: str | Sequence[str] = "all",
    *,
    trials: int = DEFAULT_TRIALS,
    seed: int = 0,
    tolerance: float = TOLERANCE,
) -> dict[str, Any]:
    """Check each selected op over ``trials`` seeded draws; the report is deterministic."""

    if trials < 1:
        raise BadInputError("gradcheck needs at least one trial")
    results: list[dict[str, Any]] = []
    for name in resolve_ops(selection):
        worst = 0.0
        for trial in range(trials):
            rng = make_rng(seed, "gradcheck", name, trial)
            worst = max(worst, check_case(OPS[name](rng), rng))
        passed = worst <= tolerance
        logger.log(logging.INFO if passed else logging.WARNING, "gradcheck %s max_rel_error=%.3e", name, worst)
        results.append({"op": name, "trials": trials, "max_rel_error": worst, "passed": passed})
    return {
        "schema": GRADCHECK_SCHEMA,
        "seed": seed,
        "step": STEP,
        "tolerance": tolerance,
        "ops": results,
        "passed": all(r["passed"] for r in results),
    }


def format_gradcheck(report: Mapping[str, Any]) -> str:
    lines = [
        f"{r['op']:<28} {r['max_rel_error']:.3e}  {'ok' if r['passed'] else 'FAIL'}"
        for r in report["ops"]
    ]
    lines.append(f"tolerance {report['tolerance']:.0e}: {'all passed' if report['passed'] else 'FAILED'}")
    return "\n".join(lines)


__all__ = [
    "DEFAULT_TRIALS",
    "GradCase",
    "OPS",
    "STEP",
    "TOLERANCE",
    "check_case",
    "format_gradcheck",
    "resolve_ops",
    "run_gradcheck",
]
