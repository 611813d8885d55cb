"""Functional Adam: ``(params, grads, state) -> (params', state')``."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from micformer.config import TrainConfig
from micformer.contracts.error import InvariantError, ShapeError
from micformer.core.tensor import Tensor
from micformer.model.params import ParameterStore


@dataclass(frozen=True)
class OptimState:
    """First/second moment estimates aligned with the parameter names, plus the step count."""

    m: ParameterStore
    v: ParameterStore
    t: int
    lr: float
    beta1: float
    beta2: float
    eps: float


def init_optim(params: ParameterStore, cfg: TrainConfig) -> OptimState:
    zeros = ParameterStore(
        (name, Tensor._from_array(np.zeros(t.shape, dtype=t.dtype))) for name, t in params.items()
    )
    return OptimState(m=zeros, v=zeros, t=0, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)


def adam_step(
    params: ParameterStore, grads: Mapping[str, Tensor], state: OptimState
) -> tuple[ParameterStore, OptimState]:
    """One bias-corrected Adam update; inputs are left untouched."""

    missing = [name for name in params if name not in grads]
    if missing:
        raise InvariantError(f"no gradient for parameter {missing[0]!r}")
    extra = [name for name in grads if name not in params]
    if extra:
        raise InvariantError(f"gradient for unknown parameter {extra[0]!r}")

    t = state.t + 1
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    new_p: dict[str, Tensor] = {}
    new_m: dict[str, Tensor] = {}
    new_v: dict[str, Tensor] = {}
    for name, p in params.items():
        g = grads[name].data
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, expected {p.shape}")
        g = g.astype(p.dtype, copy=False)
        m = state.beta1 * state.m[name].data + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name].data + (1.0 - state.beta2) * (g * g)
        update = (state.lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)
        new_p[name] = Tensor._from_array((p.data - update).astype(p.dtype, copy=False))
        new_m[name] = Tensor._from_array(m.astype(p.dtype, copy=False))
        new_v[name] = Tensor._from_array(v.astype(p.dtype, copy=False))

    next_state = OptimState(
        m=ParameterStore(new_m.items()),
        v=ParameterStore(new_v.items()),
        t=t,
        lr=state.lr,
        beta1=state.beta1,
        beta2=state.beta2,
        eps=state.eps,
    )
    return params.replace(new_p), next_state


__all__ = ["OptimState", "adam_step", "init_optim"]
