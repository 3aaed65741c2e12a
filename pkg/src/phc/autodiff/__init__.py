from .engine import (
    Tape,
    Tensor,
    absolute,
    add,
    backward,
    concat,
    div,
    exp,
    gather_rows,
    kron,
    log,
    matmul,
    mul,
    neg,
    power,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    segment_max,
    segment_mean,
    segment_min,
    segment_sum,
    sigmoid,
    softplus,
    sqrt,
    sub,
    transpose,
)
from .gradcheck import grad_check

__all__ = [
    "Tape",
    "Tensor",
    "absolute",
    "add",
    "backward",
    "concat",
    "div",
    "exp",
    "gather_rows",
    "grad_check",
    "kron",
    "log",
    "matmul",
    "mul",
    "neg",
    "power",
    "reduce_mean",
    "reduce_sum",
    "relu",
    "reshape",
    "segment_max",
    "segment_mean",
    "segment_min",
    "segment_sum",
    "sigmoid",
    "softplus",
    "sqrt",
    "sub",
    "transpose",
]
