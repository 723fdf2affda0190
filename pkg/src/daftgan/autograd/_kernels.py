"""Raw numpy kernels for 2-D convolution and pooling over NCHW arrays."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def out_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def _pad(x: np.ndarray, padding: int, value: float = 0.0) -> np.ndarray:
    if padding == 0:
        return x
    n, c, h, w = x.shape
    out = np.full((n, c, h + 2 * padding, w + 2 * padding), value)
    out[:, :, padding : padding + h, padding : padding + w] = x
    return out


def im2col(x: np.ndarray, k: int, stride: int, padding: int, fill: float = 0.0) -> np.ndarray:
    """Patches as columns: ``(C*k*k, N*Ho*Wo)``, built one kernel offset at a time."""
    n, c, h, w = x.shape
    ho, wo = out_size(h, k, stride, padding), out_size(w, k, stride, padding)
    xt = _pad(x, padding, fill).transpose(1, 0, 2, 3)
    cols = np.empty((c, k, k, n, ho, wo))
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xt[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols.reshape(c * k * k, n * ho * wo)


def conv_forward(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    n, _, h, wd = x.shape
    o, _, k, _ = w.shape
    ho, wo = out_size(h, k, stride, padding), out_size(wd, k, stride, padding)
    out = w.reshape(o, -1) @ im2col(x, k, stride, padding)
    return np.ascontiguousarray(out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3))


def conv_input_grad(g: np.ndarray, w: np.ndarray, x_shape, stride: int, padding: int) -> np.ndarray:
    o, c, k, _ = w.shape
    n, _, h, wd = x_shape
    ho, wo = g.shape[2], g.shape[3]
    if stride == 1 and o <= c and padding <= k - 1 and (ho, wo) == (h + 2 * padding - k + 1, wd + 2 * padding - k + 1):
        # full correlation with the flipped kernel: cheaper when the gradient has fewer channels
        return conv_forward(g, np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)), 1, k - 1 - padding)
    # channel-major layout keeps every strided accumulation contiguous in its last axes
    d = (w.reshape(o, -1).T @ g.transpose(1, 0, 2, 3).reshape(o, -1)).reshape(c, k, k, n, ho, wo)
    xp = np.zeros((c, n, h + 2 * padding, wd + 2 * padding))
    for i in range(k):
        for j in range(k):
            xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += d[:, i, j]
    xp = xp[:, :, padding : padding + h, padding : padding + wd]
    return np.ascontiguousarray(xp.transpose(1, 0, 2, 3))


def conv_weight_grad(x: np.ndarray, g: np.ndarray, w_shape, stride: int, padding: int) -> np.ndarray:
    o = w_shape[0]
    k = w_shape[2]
    g2 = g.transpose(1, 0, 2, 3).reshape(o, -1)
    return (g2 @ im2col(x, k, stride, padding).T).reshape(w_shape)


def max_pool_forward(x: np.ndarray, k: int, stride: int, padding: int):
    """Returns the pooled array and the flat argmax (first occurrence) per window."""
    n, c, h, w = x.shape
    ho, wo = out_size(h, k, stride, padding), out_size(w, k, stride, padding)
    win = sliding_window_view(_pad(x, padding, -np.inf), (k, k), axis=(2, 3))
    win = win[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]
    flat = win.reshape(n, c, ho, wo, k * k)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return out, arg


def max_pool_backward(g: np.ndarray, arg: np.ndarray, x_shape, k: int, stride: int, padding: int) -> np.ndarray:
    n, c, h, w = x_shape
    ho, wo = g.shape[2], g.shape[3]
    rows = (np.arange(ho) * stride)[:, None] + arg // k
    cols = (np.arange(wo) * stride)[None, :] + arg % k
    xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
    ni, ci = np.meshgrid(np.arange(n), np.arange(c), indexing="ij")
    np.add.at(xp, (ni[..., None, None], ci[..., None, None], rows, cols), g)
    if padding:
        xp = xp[:, :, padding:-padding, padding:-padding]
    return xp
