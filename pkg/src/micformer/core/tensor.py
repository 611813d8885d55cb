"""Dense tensors with eager reverse-mode differentiation.

A :class:`Tensor` wraps a read-only NumPy array. While a :class:`Tape` is active
(``with Tape() as tape:``) every operation that touches a watched tensor appends a
record holding the input node ids and a backward closure over the activations it
needs. ``tape.backward(loss)`` replays the records in reverse, visiting each
record once, and returns gradients keyed by the names given to ``tape.watch``.

Broadcasting is deliberately narrow: operands must have equal shapes, or one of
them is a scalar, or one shape is a suffix of the other (leading-axis expansion).
``matmul`` additionally broadcasts leading batch axes of extent 1.
"""

from __future__ import annotations

import contextvars
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np

from micformer.contracts.error import InvariantError, NumericError, ShapeError

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]

SUPPORTED_DTYPES: dict[str, type[np.floating[Any]]] = {
    "float32": np.float32,
    "float64": np.float64,
}

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_K = 0.044715

_ACTIVE_TAPE: contextvars.ContextVar[Tape | None] = contextvars.ContextVar(
    "micformer_active_tape", default=None
)


def resolve_dtype(name: str) -> np.dtype[Any]:
    try:
        return np.dtype(SUPPORTED_DTYPES[name])
    except KeyError as exc:
        raise ShapeError(f"unsupported dtype {name!r}; expected float32 or float64") from exc


@dataclass(frozen=True, slots=True)
class Node:
    """Handle of a tensor on a specific tape."""

    tape: Tape
    index: int


class Tensor:
    """Immutable dense array of 32- or 64-bit reals."""

    __slots__ = ("_data", "node")
    __array_priority__ = 1000

    def __init__(self, data: Any, *, dtype: str | np.dtype[Any] | None = None) -> None:
        if isinstance(data, Tensor):
            data = data._data
        target = resolve_dtype(dtype) if isinstance(dtype, str) else dtype
        arr = np.array(data, dtype=target, copy=True)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        _check_extents(arr.shape)
        arr.flags.writeable = False
        self._data = arr
        self.node: Node | None = None

    @classmethod
    def _from_array(cls, arr: np.ndarray, node: Node | None = None) -> Tensor:
        out = cls.__new__(cls)
        if arr.flags.writeable:
            arr.flags.writeable = False
        out._data = arr
        out.node = node
        return out

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self._data.shape)

    @property
    def dtype(self) -> np.dtype[Any]:
        return self._data.dtype

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return int(self._data.size)

    def numpy(self) -> np.ndarray:
        return self._data

    def item(self) -> float:
        if self._data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self._data.reshape(()))

    def detach(self) -> Tensor:
        return Tensor._from_array(self._data)

    def __repr__(self) -> str:
        tracked = "" if self.node is None else f", node={self.node.index}"
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{tracked})"

    def __add__(self, other: Tensor | float) -> Tensor:
        return add(self, other)

    def __radd__(self, other: float) -> Tensor:
        return add(other, self)

    def __sub__(self, other: Tensor | float) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: float) -> Tensor:
        return sub(other, self)

    def __mul__(self, other: Tensor | float) -> Tensor:
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other: float) -> Tensor:
        return scale(self, float(other))

    def __truediv__(self, other: float) -> Tensor:
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return scale(self, 1.0 / float(other))

    def __neg__(self) -> Tensor:
        return scale(self, -1.0)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def reshape(self, *shape: int) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], tuple | list):
            shape = tuple(shape[0])
        return reshape(self, tuple(shape))

    def transpose(self, *axes: int) -> Tensor:
        return transpose(self, tuple(axes) if axes else None)

    def sum(self, axis: int | tuple[int, ...] | None = None) -> Tensor:
        return reduce("sum", self, axis)

    def mean(self, axis: int | tuple[int, ...] | None = None) -> Tensor:
        return reduce("mean", self, axis)

    def max(self, axis: int | None = None) -> Tensor:
        return reduce("max", self, axis)


def _check_extents(shape: tuple[int, ...]) -> None:
    if any(extent <= 0 for extent in shape):
        raise ShapeError(f"tensor extents must be positive, got {shape}")


@dataclass(frozen=True, slots=True)
class TapeRecord:
    """One recorded operation: kind, input node ids (-1 = constant), backward closure."""

    kind: str
    inputs: tuple[int, ...]
    backward: BackwardFn | None
    shape: tuple[int, ...]
    dtype: np.dtype[Any]


class Tape:
    """Ordered record of operations executed while the tape is active."""

    def __init__(self) -> None:
        self._records: list[TapeRecord] = []
        self._leaves: dict[str, int] = {}
        self._tokens: list[contextvars.Token[Tape | None]] = []

    def __enter__(self) -> Tape:
        self._tokens.append(_ACTIVE_TAPE.set(self))
        return self

    def __exit__(self, *_exc: object) -> None:
        _ACTIVE_TAPE.reset(self._tokens.pop())

    def __len__(self) -> int:
        return len(self._records)

    @property
    def records(self) -> tuple[TapeRecord, ...]:
        return tuple(self._records)

    @property
    def leaf_names(self) -> tuple[str, ...]:
        return tuple(self._leaves)

    def watch(self, name: str, tensor: Tensor) -> Tensor:
        """Register ``tensor`` as a named leaf and return its tracked alias."""

        if name in self._leaves:
            raise InvariantError(f"tensor {name!r} is already watched on this tape")
        index = self._append(TapeRecord("leaf", (), None, tensor.shape, tensor.dtype))
        self._leaves[name] = index
        return Tensor._from_array(tensor.data, Node(self, index))

    def _append(self, record: TapeRecord) -> int:
        self._records.append(record)
        return len(self._records) - 1

    def backward(self, loss: Tensor) -> dict[str, Tensor]:
        """Gradients of scalar ``loss`` w.r.t. every watched leaf (zeros when unreached)."""

        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.node is None or loss.node.tape is not self:
            raise InvariantError("loss is detached from this tape; run the forward pass under it")
        grads: dict[int, np.ndarray] = {loss.node.index: np.ones(loss.shape, dtype=loss.dtype)}
        for index in range(loss.node.index, -1, -1):
            g = grads.pop(index, None)
            record = self._records[index]
            if record.backward is None:
                if g is not None:
                    grads[index] = g
                continue
            if g is None:
                continue
            input_grads = record.backward(g)
            for node_id, gi in zip(record.inputs, input_grads, strict=True):
                if node_id < 0 or gi is None:
                    continue
                target = self._records[node_id]
                gi = np.asarray(gi, dtype=target.dtype)
                if gi.shape != target.shape:
                    raise InvariantError(
                        f"{record.kind} backward produced {gi.shape} for input of {target.shape}"
                    )
                prev = grads.get(node_id)
                grads[node_id] = gi if prev is None else prev + gi
        out: dict[str, Tensor] = {}
        for name, index in self._leaves.items():
            record = self._records[index]
            g = grads.get(index)
            if g is None:
                g = np.zeros(record.shape, dtype=record.dtype)
            out[name] = Tensor._from_array(np.array(g, dtype=record.dtype))
        return out


def active_tape() -> Tape | None:
    return _ACTIVE_TAPE.get()


def backward(loss: Tensor) -> dict[str, Tensor]:
    """Backward pass on the tape that recorded ``loss``."""

    if loss.node is None:
        raise InvariantError("loss has no tape node; it was computed outside an active tape")
    return loss.node.tape.backward(loss)


def _common_dtype(inputs: Sequence[Tensor]) -> np.dtype[Any]:
    return np.result_type(*(t.dtype for t in inputs))


def apply_op(
    kind: str,
    out: np.ndarray,
    inputs: Sequence[Tensor],
    backward_fn: BackwardFn,
) -> Tensor:
    """Wrap a forward result and record it on the active tape when any input is tracked."""

    out = np.asarray(out, dtype=_common_dtype(inputs))
    if out.base is not None and out.flags.writeable:
        out = out.copy()
    tape = _ACTIVE_TAPE.get()
    if tape is None:
        return Tensor._from_array(out)
    ids = tuple(
        t.node.index if t.node is not None and t.node.tape is tape else -1 for t in inputs
    )
    if all(node_id < 0 for node_id in ids):
        return Tensor._from_array(out)
    index = tape._append(TapeRecord(kind, ids, backward_fn, tuple(out.shape), out.dtype))
    return Tensor._from_array(out, Node(tape, index))


def as_tensor(value: Tensor | float | int | np.ndarray, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor._from_array(np.array(value, dtype=dtype if dtype is not None else np.float64))


def _is_scalar(shape: tuple[int, ...]) -> bool:
    return shape == () or shape == (1,)


def broadcast_shape(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    if a == b:
        return a
    if _is_scalar(a):
        return b
    if _is_scalar(b):
        return a
    if len(a) < len(b) and b[len(b) - len(a) :] == a:
        return b
    if len(b) < len(a) and a[len(a) - len(b) :] == b:
        return a
    raise ShapeError(f"shape mismatch: {a} and {b} are not broadcast-compatible")


def sum_to_shape(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum out broadcast axes so ``grad`` matches ``shape``."""

    if grad.shape == shape:
        return grad
    if _is_scalar(shape):
        return np.asarray(grad.sum()).reshape(shape)
    lead = grad.ndim - len(shape)
    if lead > 0:
        grad = grad.sum(axis=tuple(range(lead)))
    keep = tuple(i for i, extent in enumerate(shape) if extent == 1 and grad.shape[i] != 1)
    if keep:
        grad = grad.sum(axis=keep, keepdims=True)
    return grad


def _normalize_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"axis {axis} is invalid for a tensor of rank {ndim}")
    return axis % ndim


def _normalize_axes(axis: int | tuple[int, ...] | None, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (_normalize_axis(axis, ndim),)
    axes = tuple(_normalize_axis(a, ndim) for a in axis)
    if len(set(axes)) != len(axes):
        raise ShapeError(f"duplicate axes in {axis}")
    return axes


# --------------------------------------------------------------------
# Elementwise
# --------------------------------------------------------------------
def add(a: Tensor | float, b: Tensor | float) -> Tensor:
    ta = as_tensor(a, b if isinstance(b, Tensor) else None)
    tb = as_tensor(b, ta)
    broadcast_shape(ta.shape, tb.shape)
    out = np.add(ta.data, tb.data)

    def _backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return sum_to_shape(g, ta.shape), sum_to_shape(g, tb.shape)

    return apply_op("add", out, (ta, tb), _backward)


def sub(a: Tensor | float, b: Tensor | float) -> Tensor:
    ta = as_tensor(a, b if isinstance(b, Tensor) else None)
    tb = as_tensor(b, ta)
    broadcast_shape(ta.shape, tb.shape)
    out = np.subtract(ta.data, tb.data)

    def _backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return sum_to_shape(g, ta.shape), sum_to_shape(-g, tb.shape)

    return apply_op("sub", out, (ta, tb), _backward)


def mul(a: Tensor | float, b: Tensor | float) -> Tensor:
    ta = as_tensor(a, b if isinstance(b, Tensor) else None)
    tb = as_tensor(b, ta)
    broadcast_shape(ta.shape, tb.shape)
    av, bv = ta.data, tb.data
    out = np.multiply(av, bv)

    def _backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return sum_to_shape(g * bv, ta.shape), sum_to_shape(g * av, tb.shape)

    return apply_op("mul", out, (ta, tb), _backward)


def scale(x: Tensor, factor: float) -> Tensor:
    c = float(factor)
    out = x.data * x.dtype.type(c)

    def _backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * g.dtype.type(c),)

    return apply_op("scale", out, (x,), _backward)


def neg(x: Tensor) -> Tensor:
    return scale(x, -1.0)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""

    v = x.data
    t = np.tanh(_GELU_C * (v + _GELU_K * v**3))
    out = 0.5 * v * (1.0 + t)

    def _backward(g: np.ndarray) -> tuple[np.ndarray]:
        d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_K * v * v)
        return (g * d,)

    return apply_op("gelu", out, (x,), _backward)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def _backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * out,)

    return apply_op("exp", out, (x,), _backward)


def sqrt(x: Tensor) -> Tensor:
    if np.any(x.data < 0) or not np.all(np.isfinite(x.data)):
        raise NumericError("square-root domain error: inputs must be finite and >= 0")
    out = np.sqrt(x.data)

    def _backward(g: np.ndarray) -> tuple[np.ndarray]:
        with np.errstate(divide="ignore"):
            return (g * 0.5 / out,)

    return apply_op("sqrt", out, (x,), _backward)


def reciprocal(x: Tensor) -> Tensor:
    if np.any(x.data == 0) or not np.all(np.isfinite(x.data)):
        raise NumericError("reciprocal domain error: inputs must be finite and non-zero")
    out = 1.0 / x.data

    def _backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (-g * out * out,)

    return apply_op("reciprocal", out, (x,), _backward)


ELEMENTWISE_KINDS = ("add", "sub", "mul", "scale", "gelu", "exp", "sqrt", "reciprocal")


def elementwise(kind: str, *operands: Tensor | float) -> Tensor:
    """Dispatch one of :data:`ELEMENTWISE_KINDS` by name."""

    binary: dict[str, Callable[[Any, Any], Tensor]] = {"add": add, "sub": sub, "mul": mul}
    unary: dict[str, Callable[[Tensor], Tensor]] = {
        "gelu": gelu,
        "exp": exp,
        "sqrt": sqrt,
        "reciprocal": reciprocal,
    }
    if kind in binary:
        if len(operands) != 2:
            raise ShapeError(f"{kind} takes two operands, got {len(operands)}")
        return binary[kind](operands[0], operands[1])
    if kind == "scale":
        x, factor = operands
        if not isinstance(x, Tensor) or isinstance(factor, Tensor):
            raise ShapeError("scale takes (tensor, constant)")
        return scale(x, float(factor))
    if kind in unary:
        (x,) = operands
        if not isinstance(x, Tensor):
            raise ShapeError(f"{kind} takes a tensor operand")
        return unary[kind](x)
    raise ShapeError(f"unknown elementwise kind {kind!r}; expected one of {ELEMENTWISE_KINDS}")


# --------------------------------------------------------------------
# Linear algebra and normalisation
# --------------------------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as exc:
        raise ShapeError(f"matmul batch mismatch: {a.shape} @ {b.shape}") from exc
    av, bv = a.data, b.data
    out = np.matmul(av, bv)

    def _backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ga = np.matmul(g, np.swapaxes(bv, -1, -2))
        gb = np.matmul(np.swapaxes(av, -1, -2), g)
        return sum_to_shape(ga, a.shape), sum_to_shape(gb, b.shape)

    return apply_op("matmul", out, (a, b), _backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    ax = _normalize_axis(axis, x.ndim)
    shifted = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=ax, keepdims=True)

    def _backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (out * (g - (g * out).sum(axis=ax, keepdims=True)),)

    return apply_op("softmax", out, (x,), _backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    ax = _normalize_axis(axis, x.ndim)
    shifted = x.data - x.data.max(axis=ax, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=ax, keepdims=True))
    out = shifted - lse

    def _backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g - np.exp(out) * g.sum(axis=ax, keepdims=True),)

    return apply_op("log_softmax", out, (x,), _backward)


# --------------------------------------------------------------------
# Reductions
# --------------------------------------------------------------------
REDUCE_KINDS = ("sum", "mean", "max")


def reduce(kind: str, x: Tensor, axis: int | tuple[int, ...] | None = None) -> Tensor:
    """Sum/mean/max over ``axis`` (all axes when None); max routes to the first maximum."""

    if kind not in REDUCE_KINDS:
        raise ShapeError(f"unknown reduction {kind!r}; expected one of {REDUCE_KINDS}")
    axes = _normalize_axes(axis, x.ndim)
    in_shape = x.shape
    kept = tuple(1 if i in axes else e for i, e in enumerate(in_shape))
    count = int(np.prod([in_shape[i] for i in axes])) if axes else 1

    if kind == "sum":
        out = x.data.sum(axis=axes)

        def _backward(g: np.ndarray) -> tuple[np.ndarray]:
            return (np.broadcast_to(g.reshape(kept), in_shape).copy(),)

        return apply_op("sum", out, (x,), _backward)

    if kind == "mean":
        out = x.data.mean(axis=axes)

        def _backward_mean(g: np.ndarray) -> tuple[np.ndarray]:
            return (np.broadcast_to(g.reshape(kept) / count, in_shape).copy(),)

        return apply_op("mean", out, (x,), _backward_mean)

    if isinstance(axis, tuple) and len(axes) > 1:
        raise ShapeError("max reduces over a single axis or all axes")
    v = x.data
    if axis is None:
        flat = int(np.argmax(v))
        out = np.asarray(v.reshape(-1)[flat])

        def _backward_max_all(g: np.ndarray) -> tuple[np.ndarray]:
            gx = np.zeros(v.size, dtype=g.dtype)
            gx[flat] = g.reshape(())
            return (gx.reshape(in_shape),)

        return apply_op("max", out, (x,), _backward_max_all)

    ax = axes[0]
    idx = np.argmax(v, axis=ax)
    out = np.take_along_axis(v, np.expand_dims(idx, ax), axis=ax).squeeze(ax)

    def _backward_max(g: np.ndarray) -> tuple[np.ndarray]:
        gx = np.zeros(in_shape, dtype=g.dtype)
        np.put_along_axis(gx, np.expand_dims(idx, ax), np.expand_dims(g, ax), axis=ax)
        return (gx,)

    return apply_op("max", out, (x,), _backward_max)


def sum(x: Tensor, axis: int | tuple[int, ...] | None = None) -> Tensor:  # noqa: A001
    return reduce("sum", x, axis)


def mean(x: Tensor, axis: int | tuple[int, ...] | None = None) -> Tensor:
    return reduce("mean", x, axis)


# --------------------------------------------------------------------
# Layout plumbing
# --------------------------------------------------------------------
def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if -1 in shape:
        known = int(np.prod([s for s in shape if s != -1]))
        if shape.count(-1) > 1 or known == 0 or x.size % known:
            raise ShapeError(f"cannot reshape {x.shape} to {shape}")
        shape = tuple(x.size // known if s == -1 else s for s in shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")
    _check_extents(shape)
    in_shape = x.shape
    out = x.data.reshape(shape)

    def _backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g.reshape(in_shape),)

    return apply_op("reshape", out, (x,), _backward)


def transpose(x: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    perm = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    if sorted(perm) != list(range(x.ndim)):
        raise ShapeError(f"invalid permutation {perm} for rank {x.ndim}")
    inverse = tuple(int(i) for i in np.argsort(perm))
    out = np.ascontiguousarray(x.data.transpose(perm))

    def _backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return apply_op("transpose", out, (x,), _backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    ax = _normalize_axis(axis, ndim)
    for t in tensors:
        if t.ndim != ndim or t.shape[:ax] + t.shape[ax + 1 :] != (
            tensors[0].shape[:ax] + tensors[0].shape[ax + 1 :]
        ):
            raise ShapeError(
                f"concat shape mismatch along axis {ax}: {[u.shape for u in tensors]}"
            )
    out = np.concatenate([t.data for t in tensors], axis=ax)
    splits = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def _backward(g: np.ndarray) -> list[np.ndarray]:
        return [np.ascontiguousarray(part) for part in np.split(g, splits, axis=ax)]

    return apply_op("concat", out, tuple(tensors), _backward)


def roll(x: Tensor, shifts: Sequence[int], axes: Sequence[int]) -> Tensor:
    """Cyclic shift; the inverse roll routes gradients back."""

    if len(shifts) != len(axes):
        raise ShapeError("roll needs one shift per axis")
    norm_axes = tuple(_normalize_axis(a, x.ndim) for a in axes)
    sh = tuple(int(s) for s in shifts)
    out = np.roll(x.data, sh, axis=norm_axes)

    def _backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (np.roll(g, tuple(-s for s in sh), axis=norm_axes),)

    return apply_op("roll", out, (x,), _backward)


def take(table: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows of ``table`` (axis 0) at integer ``index``; output shape index.shape + row."""

    idx = np.asarray(index)
    if idx.dtype.kind not in "iu":
        raise ShapeError("take needs an integer index array")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(f"take index out of range for table of {table.shape[0]} rows")
    row_shape = table.shape[1:]
    out = np.take(table.data, idx, axis=0)

    def _backward(g: np.ndarray) -> tuple[np.ndarray]:
        gt = np.zeros(table.shape, dtype=g.dtype)
        np.add.at(gt, idx.reshape(-1), g.reshape((-1, *row_shape)))
        return (gt,)

    return apply_op("take", out, (table,), _backward)


__all__ = [
    "BackwardFn",
    "ELEMENTWISE_KINDS",
    "REDUCE_KINDS",
    "SUPPORTED_DTYPES",
    "Node",
    "Tape",
    "TapeRecord",
    "Tensor",
    "active_tape",
    "add",
    "apply_op",
    "as_tensor",
    "backward",
    "broadcast_shape",
    "concat",
    "elementwise",
    "exp",
    "gelu",
    "log_softmax",
    "matmul",
    "mean",
    "mul",
    "neg",
    "reciprocal",
    "reduce",
    "reshape",
    "resolve_dtype",
    "roll",
    "scale",
    "softmax",
    "sqrt",
    "sub",
    "sum",
    "sum_to_shape",
    "take",
    "transpose",
]
