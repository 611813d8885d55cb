from .rng import derive_seed, make_rng, truncated_normal
from .tensor import (
    Tape,
    TapeRecord,
    Tensor,
    add,
    apply_op,
    backward,
    concat,
    elementwise,
    exp,
    gelu,
    log_softmax,
    matmul,
    mul,
    neg,
    reciprocal,
    reduce,
    reshape,
    resolve_dtype,
    roll,
    scale,
    softmax,
    sqrt,
    sub,
    take,
    transpose,
)

__all__ = [
    "Tape",
    "TapeRecord",
    "Tensor",
    "add",
    "apply_op",
    "backward",
    "concat",
    "derive_seed",
    "elementwise",
    "exp",
    "gelu",
    "log_softmax",
    "make_rng",
    "matmul",
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
    "take",
    "transpose",
    "truncated_normal",
]
