"""Named learnable tensors and their deterministic initialisation."""

from __future__ import annotations

from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass

import numpy as np

from micformer.config import ModelConfig
from micformer.contracts.error import DataError, InvariantError
from micformer.core.rng import make_rng, truncated_normal
from micformer.core.tensor import Tensor, resolve_dtype

MLP_RATIO = 4
OFFSET_KERNEL = 3
MAX_NAME_BYTES = 0xFFFF


class ParameterStore(Mapping[str, Tensor]):
    """Ordered, immutable ``name -> Tensor`` map; iteration follows insertion order."""

    def __init__(self, items: Mapping[str, Tensor] | Iterable[tuple[str, Tensor]] = ()) -> None:
        pairs = items.items() if isinstance(items, Mapping) else items
        tensors: dict[str, Tensor] = {}
        for name, value in pairs:
            if not name or len(name.encode("utf-8")) > MAX_NAME_BYTES:
                raise InvariantError(f"invalid parameter name {name!r}")
            if name in tensors:
                raise InvariantError(f"duplicate parameter name {name!r}")
            tensors[name] = value if isinstance(value, Tensor) else Tensor(value)
        self._tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def __repr__(self) -> str:
        return f"ParameterStore({len(self)} tensors, {count_parameters(self)} values)"

    def replace(self, updates: Mapping[str, Tensor]) -> ParameterStore:
        """New store with ``updates`` swapped in; names and order are preserved."""

        unknown = [name for name in updates if name not in self._tensors]
        if unknown:
            raise InvariantError(f"cannot replace unknown parameters: {unknown[:5]}")
        return ParameterStore((name, updates.get(name, t)) for name, t in self._tensors.items())

    def select(self, prefix: str) -> ParameterStore:
        return ParameterStore((n, t) for n, t in self._tensors.items() if n.startswith(prefix))

    def equals(self, other: Mapping[str, Tensor]) -> bool:
        """Bitwise equality of names, order, dtypes and values."""

        if list(self) != list(other):
            return False
        for name, t in self._tensors.items():
            o = other[name]
            if t.dtype != o.dtype or t.shape != o.shape:
                return False
            if t.data.tobytes() != o.data.tobytes():
                return False
        return True


def count_parameters(store: Mapping[str, Tensor]) -> int:
    return sum(t.size for t in store.values())


@dataclass(frozen=True, slots=True)
class ParamSpec:
    name: str
    shape: tuple[int, ...]
    init: str  # "normal" | "zeros" | "ones"


def _norm(prefix: str, c: int) -> list[ParamSpec]:
    return [ParamSpec(f"{prefix}.gamma", (c,), "ones"), ParamSpec(f"{prefix}.beta", (c,), "zeros")]


def _attention(prefix: str, c: int, heads: int, window: int) -> list[ParamSpec]:
    specs: list[ParamSpec] = []
    for proj in ("q", "k", "v"):
        specs.append(ParamSpec(f"{prefix}.w{proj}", (c, c), "normal"))
        specs.append(ParamSpec(f"{prefix}.b{proj}", (c,), "zeros"))
    specs.append(ParamSpec(f"{prefix}.wo", (c, c), "zeros"))
    specs.append(ParamSpec(f"{prefix}.bo", (c,), "zeros"))
    specs.append(ParamSpec(f"{prefix}.rel_bias", ((2 * window - 1) ** 3, heads), "zeros"))
    return specs


def _mlp(prefix: str, c: int) -> list[ParamSpec]:
    hidden = MLP_RATIO * c
    return [
        ParamSpec(f"{prefix}.fc1.weight", (c, hidden), "normal"),
        ParamSpec(f"{prefix}.fc1.bias", (hidden,), "zeros"),
        ParamSpec(f"{prefix}.fc2.weight", (hidden, c), "zeros"),
        ParamSpec(f"{prefix}.fc2.bias", (c,), "zeros"),
    ]


def _swin(prefix: str, c: int, heads: int, window: int) -> list[ParamSpec]:
    return [
        *_norm(f"{prefix}.norm1", c),
        *_attention(f"{prefix}.attn", c, heads, window),
        *_norm(f"{prefix}.norm2", c),
        *_mlp(f"{prefix}.mlp", c),
    ]


def _cross(prefix: str, c: int, heads: int, window: int, deformable: bool) -> list[ParamSpec]:
    specs = [
        *_norm(f"{prefix}.norm_q", c),
        *_norm(f"{prefix}.norm_k", c),
        *_attention(f"{prefix}.attn", c, heads, window),
    ]
    if deformable:
        k = OFFSET_KERNEL
        specs += [
            # zero pointwise stage and bias: offsets are exactly zero at init
            ParamSpec(f"{prefix}.offset.depthwise", (k, k, k, 2 * c), "normal"),
            ParamSpec(f"{prefix}.offset.pointwise", (2 * c, 3), "zeros"),
            ParamSpec(f"{prefix}.offset.bias", (3,), "zeros"),
        ]
    specs += [*_norm(f"{prefix}.norm2", c), *_mlp(f"{prefix}.mlp", c)]
    return specs


def stream_names(cfg: ModelConfig) -> tuple[str, ...]:
    return ("a", "b") if cfg.dual else ("a",)


def parameter_specs(cfg: ModelConfig) -> list[ParamSpec]:
    """Every learnable tensor of the configured network, in store order."""

    w = cfg.window
    cross = cfg.dual
    specs: list[ParamSpec] = []
    for s in stream_names(cfg):
        c0 = cfg.channels_at(0)
        specs.append(ParamSpec(f"{s}.embed.weight", (cfg.patch**3, c0), "normal"))
        specs.append(ParamSpec(f"{s}.embed.bias", (c0,), "zeros"))
        for i in range(cfg.stages):
            c, heads = cfg.channels_at(i), cfg.heads_at(i)
            for j in range(cfg.blocks_per_stage):
                specs += _swin(f"{s}.enc{i}.{j}.swin", c, heads, w)
                if cross:
                    specs += _cross(f"{s}.enc{i}.{j}.cross", c, heads, w, cfg.deformable)
            if i < cfg.stages - 1:
                specs.append(ParamSpec(f"{s}.merge{i}.weight", (8 * c, 2 * c), "normal"))
        for i in range(cfg.stages - 2, -1, -1):
            c_in = cfg.channels_at(i + 1)
            c, heads = cfg.channels_at(i), cfg.heads_at(i)
            specs.append(ParamSpec(f"{s}.expand{i}.weight", (c_in, 4 * c_in), "normal"))
            for j in range(cfg.decoder_blocks):
                specs += _swin(f"{s}.dec{i}.{j}.swin", c, heads, w)
                if cross:
                    specs += _cross(f"{s}.dec{i}.{j}.cross", c, heads, w, cfg.deformable)
        specs.append(ParamSpec(f"{s}.final.weight", (c0, cfg.patch**3 * c0), "normal"))
        specs.append(ParamSpec(f"{s}.final.bias", (c0,), "zeros"))
    c0, k = cfg.channels_at(0), cfg.num_classes
    specs.append(ParamSpec("head.ct.weight", (c0, k), "normal"))
    if cross:
        # the MRI half starts silent: at init the fused head equals the CT-only head
        specs.append(ParamSpec("head.mri.weight", (c0, k), "zeros"))
    specs.append(ParamSpec("head.bias", (k,), "zeros"))
    return specs


def init_params(cfg: ModelConfig) -> ParameterStore:
    """Deterministic initial store; each tensor draws from its own labelled stream."""

    dtype = resolve_dtype(cfg.dtype)
    tensors: list[tuple[str, Tensor]] = []
    for spec in parameter_specs(cfg):
        if spec.init == "normal":
            rng = make_rng(cfg.seed, "init", spec.name)
            arr = truncated_normal(rng, spec.shape, cfg.init_std, dtype=dtype)
        elif spec.init == "ones":
            arr = np.ones(spec.shape, dtype=dtype)
        else:
            arr = np.zeros(spec.shape, dtype=dtype)
        tensors.append((spec.name, Tensor(arr, dtype=dtype)))
    return ParameterStore(tensors)


def check_store(store: Mapping[str, Tensor], cfg: ModelConfig) -> None:
    """Raise :class:`DataError` when ``store`` does not match the architecture of ``cfg``."""

    expected = {spec.name: spec.shape for spec in parameter_specs(cfg)}
    missing = [name for name in expected if name not in store]
    extra = [name for name in store if name not in expected]
    if missing or extra:
        raise DataError(
            f"parameter set does not match the model config (missing {missing[:3]}, "
            f"unexpected {extra[:3]})",
            hint="use the config the checkpoint was trained with",
        )
    for name, shape in expected.items():
        if store[name].shape != shape:
            raise DataError(f"parameter {name} has shape {store[name].shape}, expected {shape}")


__all__ = [
    "MLP_RATIO",
    "ParamSpec",
    "ParameterStore",
    "check_store",
    "count_parameters",
    "init_params",
    "parameter_specs",
    "stream_names",
]
