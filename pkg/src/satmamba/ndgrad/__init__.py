"""Deterministic tensor engine: numpy storage, reverse-mode autodiff,
splitmix64 RNG streams, finite-difference gradient checking."""

from .gradcheck import grad_check
from .rng import Rng
from .tensor import (
    GraphError,
    NonFiniteError,
    ShapeError,
    Tensor,
    add,
    backward,
    concat,
    custom_op,
    exp,
    gather,
    layernorm,
    log,
    log_softmax,
    matmul,
    mul,
    neg,
    no_grad,
    reduce_mean,
    reduce_sum,
    reshape,
    rmsnorm,
    scatter,
    set_finite_checks,
    sigmoid,
    silu,
    slice_axis,
    softplus,
    sub,
    transpose,
)

# One entry per primitive op kind, for sweep-style tests.
OPS = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "neg": neg,
    "exp": exp,
    "log": log,
    "softplus": softplus,
    "silu": silu,
    "sigmoid": sigmoid,
    "rmsnorm": rmsnorm,
    "layernorm": layernorm,
    "log_softmax": log_softmax,
    "reshape": reshape,
    "transpose": transpose,
    "gather": gather,
    "scatter": scatter,
    "sum": reduce_sum,
    "mean": reduce_mean,
    "concat": concat,
    "slice": slice_axis,
}

__all__ = [
    "Tensor", "Rng", "grad_check", "backward", "no_grad", "custom_op",
    "set_finite_checks", "OPS", "ShapeError", "NonFiniteError", "GraphError",
    "matmul", "add", "sub", "mul", "neg", "exp", "log", "softplus", "silu",
    "sigmoid", "rmsnorm", "layernorm", "log_softmax", "reshape", "transpose",
    "gather", "scatter", "reduce_sum", "reduce_mean", "concat", "slice_axis",
]
