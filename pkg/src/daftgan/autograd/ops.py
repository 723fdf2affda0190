"""Differentiable operations.

Shapes must match exactly, except that a 0-d tensor (or Python number) may be
combined with any tensor. Anything else needs an explicit ``broadcast_to``.
"""
from __future__ import annotations

import builtins
from typing import Sequence

import numpy as np

from . import _kernels as K
from .tensor import ShapeError, Tensor, as_tensor, make_node


def _const(arr) -> Tensor:
    return Tensor(arr)


def _check_binary(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ (only scalar broadcasting is supported)")


def _reduce_to(g: Tensor, shape) -> Tensor:
    if g.shape == tuple(shape):
        return g
    return sum(g)  # scalar operand: collapse everything


# -- arithmetic -----------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "add")
    return make_node(a.data + b.data, "add", (a, b),
                     lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "sub")
    return make_node(a.data - b.data, "sub", (a, b),
                     lambda g: (_reduce_to(g, a.shape), _reduce_to(neg(g), b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_node(-a.data, "neg", (a,), lambda g: (neg(g),))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "mul")

    def vjp(g):
        ga = _reduce_to(mul(g, b), a.shape) if a.requires_grad else None
        gb = _reduce_to(mul(g, a), b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(a.data * b.data, "mul", (a, b), vjp)


def scale(a, c: float) -> Tensor:
    return mul(a, float(c))


def power(x, p: float) -> Tensor:
    x = as_tensor(x)
    p = float(p)

    def vjp(g):
        if p == 0.0:
            return (None,)
        return (mul(g, mul(power(x, p - 1.0), p)),)

    with np.errstate(divide="ignore"):
        data = np.power(x.data, p)
    return make_node(data, "power", (x,), vjp, meta=f"p={p:g}")


def _half_rsqrt(x: Tensor) -> Tensor:
    # d/dx sqrt(x); defined as 0 at x == 0 so zero-norm penalties stay finite
    pos = x.data > 0
    safe = np.where(pos, x.data, 1.0)
    data = np.where(pos, 0.5 / np.sqrt(safe), 0.0)
    deriv = np.where(pos, -0.25 * safe ** -1.5, 0.0)
    return make_node(data, "half_rsqrt", (x,), lambda g: (mul(g, _const(deriv)),))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    return make_node(np.sqrt(x.data), "sqrt", (x,), lambda g: (mul(g, _half_rsqrt(x)),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    m = (x.data > 0).astype(np.float64)
    return make_node(x.data * m, "relu", (x,), lambda g: (mul(g, _const(m)),))


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    m = np.where(x.data > 0, 1.0, slope)
    return make_node(x.data * m, "leaky_relu", (x,), lambda g: (mul(g, _const(m)),), meta=f"slope={slope:g}")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return make_node(y, "tanh", (x,), lambda g: (mul(g, _const(1.0 - y * y)),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return make_node(y, "sigmoid", (x,), lambda g: (mul(g, _const(y * (1.0 - y))),))


def abs(x) -> Tensor:
    x = as_tensor(x)
    return make_node(np.abs(x.data), "abs", (x,), lambda g: (mul(g, _const(np.sign(x.data))),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return make_node(y, "exp", (x,), lambda g: (mul(g, _const(y)),))


# -- reductions -----------------------------------------------------------------

def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for a in axis:
        if not -ndim <= a < ndim:
            raise ShapeError(f"axis {a} out of range for {ndim}-d tensor")
        out.append(a % ndim)
    return tuple(sorted(set(out)))


def sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    kept = tuple(1 if i in axes else d for i, d in enumerate(x.shape))

    def vjp(g):
        return (broadcast_to(reshape(g, kept), x.shape),)

    return make_node(np.sum(x.data, axis=axes, keepdims=keepdims), "sum", (x,), vjp)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return mul(sum(x, axis=axes, keepdims=keepdims), 1.0 / n)


def square_norm(x) -> Tensor:
    x = as_tensor(x)
    return sum(mul(x, x))


# -- structural -----------------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    try:
        data = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}") from exc
    return make_node(data, "reshape", (x,), lambda g: (reshape(g, x.shape),))


def transpose(x, perm: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    perm = tuple(perm)
    inv = tuple(np.argsort(perm))
    return make_node(np.ascontiguousarray(x.data.transpose(perm)), "transpose", (x,),
                     lambda g: (transpose(g, inv),))


def broadcast_to(x, shape) -> Tensor:
    """Explicit broadcast (numpy rules); backward sums the replicated axes."""
    x = as_tensor(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    try:
        data = np.broadcast_to(x.data, shape).copy()
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {x.shape} to {shape}") from exc
    lead = len(shape) - x.ndim
    axes = tuple(range(lead)) + tuple(lead + i for i, d in enumerate(x.shape) if d == 1 and shape[lead + i] != 1)

    def vjp(g):
        return (reshape(sum(g, axis=axes), x.shape),)

    return make_node(data, "broadcast_to", (x,), vjp)


def _check_basic_index(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    for it in items:
        if not (isinstance(it, (slice, int, np.integer)) or it is Ellipsis or it is None):
            raise TypeError("getitem supports basic indexing only (slices, ints, Ellipsis)")


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)
    _check_basic_index(idx)
    return make_node(np.array(x.data[idx]), "getitem", (x,), lambda g: (scatter(g, idx, x.shape),))


def scatter(g, idx, shape) -> Tensor:
    """Zero tensor of ``shape`` with ``g`` written at ``idx`` (adjoint of getitem)."""
    g = as_tensor(g)
    out = np.zeros(shape)
    out[idx] = g.data
    return make_node(out, "scatter", (g,), lambda gg: (getitem(gg, idx),))


def concat(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise ShapeError("concat needs at least one tensor")
    ndim = xs[0].ndim
    ax = axis % ndim
    for x in xs[1:]:
        if x.ndim != ndim or any(a != b for i, (a, b) in enumerate(zip(x.shape, xs[0].shape)) if i != ax):
            raise ShapeError(f"concat: shapes {xs[0].shape} and {x.shape} disagree off axis {axis}")
    if len(xs) == 1:
        return xs[0]
    bounds = np.cumsum([0] + [x.shape[ax] for x in xs])

    def vjp(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx = (slice(None),) * ax + (slice(int(lo), int(hi)),)
            out.append(getitem(g, idx))
        return tuple(out)

    return make_node(np.concatenate([x.data for x in xs], axis=ax), "concat", tuple(xs), vjp)


def split(x, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    x = as_tensor(x)
    ax = axis % x.ndim
    if builtins.sum(sizes) != x.shape[ax]:
        raise ShapeError(f"split sizes {list(sizes)} do not add up to {x.shape[ax]}")
    out, lo = [], 0
    for s in sizes:
        out.append(getitem(x, (slice(None),) * ax + (slice(lo, lo + s),)))
        lo += s
    return out


def embedding(table, indices) -> Tensor:
    """Rows of ``table`` picked by an integer index array."""
    table = as_tensor(table)
    idx = np.asarray(indices, dtype=np.int64)

    def vjp(g):
        gt = np.zeros(table.shape)
        np.add.at(gt, idx, g.data)
        return (_const(gt),)

    return make_node(table.data[idx], "embedding", (table,), vjp)


# -- linear algebra -------------------------------------------------------------

def _swap_last(x: Tensor) -> Tensor:
    perm = list(range(x.ndim))
    perm[-1], perm[-2] = perm[-2], perm[-1]
    return transpose(x, perm)


def matmul(a, b) -> Tensor:
    """Batched matrix product; both operands need the same rank (>= 2) and batch dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")

    def vjp(g):
        ga = matmul(g, _swap_last(b)) if a.requires_grad else None
        gb = matmul(_swap_last(a), g) if b.requires_grad else None
        return ga, gb

    return make_node(np.matmul(a.data, b.data), "matmul", (a, b), vjp)


def linear(x, weight, bias=None) -> Tensor:
    """Affine map over the trailing axis: ``x @ weight.T + bias``."""
    x, weight = as_tensor(x), as_tensor(weight)
    m, n = weight.shape
    if x.shape[-1] != n:
        raise ShapeError(f"linear: input trailing dim {x.shape[-1]} != weight in-features {n}")
    data = x.data @ weight.data.T
    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (m,):
            raise ShapeError(f"linear: bias shape {bias.shape} != ({m},)")
        data = data + bias.data
        inputs.append(bias)

    def vjp(g):
        g2 = reshape(g, (-1, m))
        gx = reshape(matmul(g2, weight), x.shape) if x.requires_grad else None
        gw = matmul(_swap_last(g2), reshape(x, (-1, n))) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, sum(g2, axis=0)

    return make_node(data, "linear", tuple(inputs), vjp)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    ax = _norm_axes(axis, x.ndim)[0]
    z = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=ax, keepdims=True)

    def vjp(g):
        gd = g.data
        return (_const(y * (gd - (gd * y).sum(axis=ax, keepdims=True))),)

    return make_node(y, "softmax", (x,), vjp, meta=f"axis={ax}")


# -- spatial --------------------------------------------------------------------

def upsample_nearest2x(x) -> Tensor:
    """Replicate each pixel of the last two axes into a 2x2 block."""
    x = as_tensor(x)
    data = x.data.repeat(2, axis=-2).repeat(2, axis=-1)
    h, w = x.shape[-2:]

    def vjp(g):
        gd = g.data.reshape(x.shape[:-2] + (h, 2, w, 2)).sum(axis=(-3, -1))
        return (_const(gd),)

    return make_node(data, "upsample_nearest2x", (x,), vjp)


def _as4d(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected a CHW or NCHW tensor, got shape {x.shape}")


def _check_window(h: int, w: int, k: int, stride: int, padding: int, op: str) -> None:
    if k <= 0 or stride <= 0 or padding < 0:
        raise ValueError(f"{op}: kernel and stride must be positive, padding non-negative")
    if h + 2 * padding < k or w + 2 * padding < k:
        raise ShapeError(f"{op}: kernel {k} larger than padded input {h}x{w} (pad {padding})")


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    x, weight = as_tensor(x), as_tensor(weight)
    x4, squeeze = _as4d(x)
    o, c, k, k2 = weight.shape
    if k != k2:
        raise ShapeError("conv2d: only square kernels are supported")
    if x4.shape[1] != c:
        raise ShapeError(f"conv2d: input has {x4.shape[1]} channels but weight expects {c} (weight shape {weight.shape})")
    _check_window(x4.shape[2], x4.shape[3], k, stride, padding, "conv2d")
    data = K.conv_forward(x4.data, weight.data, stride, padding)
    inputs = [x4, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (o,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} != ({o},)")
        data = data + bias.data[None, :, None, None]
        inputs.append(bias)

    def vjp(g):
        gx = conv2d_input_grad(g, weight, x4.shape, stride, padding) if x4.requires_grad else None
        gw = conv2d_weight_grad(x4, g, weight.shape, stride, padding) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, sum(g, axis=(0, 2, 3))

    out = make_node(data, "conv2d", tuple(inputs), vjp, meta=f"k={k} s={stride} p={padding}")
    return reshape(out, out.shape[1:]) if squeeze else out


def conv2d_input_grad(g, weight, x_shape, stride: int, padding: int) -> Tensor:
    """Transpose convolution: the input-gradient of :func:`conv2d`."""
    g, weight = as_tensor(g), as_tensor(weight)
    data = K.conv_input_grad(g.data, weight.data, x_shape, stride, padding)

    def vjp(u):
        gg = conv2d(u, weight, None, stride, padding) if g.requires_grad else None
        gw = conv2d_weight_grad(u, g, weight.shape, stride, padding) if weight.requires_grad else None
        return gg, gw

    return make_node(data, "conv2d_input_grad", (g, weight), vjp)


def conv2d_weight_grad(x, g, w_shape, stride: int, padding: int) -> Tensor:
    """Weight-gradient of :func:`conv2d` as a differentiable op."""
    x, g = as_tensor(x), as_tensor(g)
    data = K.conv_weight_grad(x.data, g.data, w_shape, stride, padding)

    def vjp(v):
        gx = conv2d_input_grad(g, v, x.shape, stride, padding) if x.requires_grad else None
        gg = conv2d(x, v, None, stride, padding) if g.requires_grad else None
        return gx, gg

    return make_node(data, "conv2d_weight_grad", (x, g), vjp)


def max_pool2d(x, k: int, stride: int, padding: int = 0) -> Tensor:
    """Window maximum; padding never wins. Gradient goes to the first argmax."""
    x = as_tensor(x)
    x4, squeeze = _as4d(x)
    _check_window(x4.shape[2], x4.shape[3], k, stride, padding, "max_pool2d")
    if padding >= k:
        raise ValueError("max_pool2d: padding must be smaller than the kernel")
    data, arg = K.max_pool_forward(x4.data, k, stride, padding)

    def vjp(g):
        return (_const(K.max_pool_backward(g.data, arg, x4.shape, k, stride, padding)),)

    out = make_node(data, "max_pool2d", (x4,), vjp, meta=f"k={k} s={stride} p={padding}")
    return reshape(out, out.shape[1:]) if squeeze else out


def spatial_replicate(v, h: int, w: int) -> Tensor:
    """``[..., d] -> [..., d, h, w]`` with every location holding ``v``."""
    v = as_tensor(v)
    return broadcast_to(reshape(v, v.shape + (1, 1)), v.shape + (h, w))
