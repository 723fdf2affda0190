"""Minimal float64 tensor engine with reverse-mode (and partial double) differentiation."""
from . import ops
from .nn import Conv2d, Linear, MLP, Module, Parameter
from .ops import (
    abs, add, broadcast_to, concat, conv2d, embedding, exp, getitem, leaky_relu, linear,
    matmul, max_pool2d, mean, mul, neg, power, relu, reshape, scale, sigmoid, softmax,
    spatial_replicate, split, sqrt, square_norm, sub, sum, tanh, transpose, upsample_nearest2x,
)
from .tensor import (
    DOUBLE_BACKWARD_OPS, BackwardError, ShapeError, Tape, Tensor, UnsupportedOpError,
    as_tensor, backward, dump_graph, grad, grad_of_grad, no_grad, ones, set_grad_enabled, zeros,
)

__all__ = [name for name in dir() if not name.startswith("_")]
