"""Reverse-mode differentiable numerics on float64 numpy arrays."""
from .adam import Adam, AdamState, UsageError, adam_step, clip_grad_norm
from .gradcheck import GradCheckError, GradCheckReport, grad_check
from .module import Linear, Module, uniform_init
from .rng import ALGORITHM as RNG_ALGORITHM
from .rng import SeededRng
from .tensor import (
    DiffTensor,
    ShapeError,
    Tensor,
    absolute,
    add,
    as_tensor,
    concat,
    cos,
    div,
    exp,
    getitem,
    is_grad_enabled,
    leaky_relu,
    linear,
    log,
    logsigmoid,
    make_op,
    masked_softmax,
    matmul,
    maximum_const,
    mean,
    mul,
    neg,
    no_grad,
    reshape,
    sigmoid,
    sin,
    smooth_clamp,
    sqrt,
    square,
    stack,
    sub,
    tanh,
    transpose,
    tsum,
    unbroadcast,
)


def linear_forward(x, W, b):
    """``W x + b`` (alias of :func:`linear`)."""
    return linear(x, W, b)
