"""Reference implementations written without the package's code paths."""
import itertools
import math

import numpy as np


def psnr_direct(x_hat, x):
    a = (np.asarray(x_hat, dtype=np.float64).ravel() + 1) / 2
    b = (np.asarray(x, dtype=np.float64).ravel() + 1) / 2
    total = 0.0
    for u, v in zip(a, b):
        total += (u - v) * (u - v)
    mse = total / len(a)
    return math.inf if mse == 0 else 10 * math.log10(1.0 / mse)


def ssim_direct(x_hat, x, window=8, c1=0.01 ** 2, c2=0.03 ** 2):
    """Mean SSIM over every stride-1 window of every channel, with population moments."""
    a = (np.asarray(x_hat, dtype=np.float64) + 1) / 2
    b = (np.asarray(x, dtype=np.float64) + 1) / 2
    if a.ndim == 3:
        a, b = a[None], b[None]
    vals = []
    n, c, h, w = a.shape
    for i in range(n):
        for ch in range(c):
            for r in range(h - window + 1):
                for q in range(w - window + 1):
                    pa = a[i, ch, r:r + window, q:q + window].ravel()
                    pb = b[i, ch, r:r + window, q:q + window].ravel()
                    ma, mb = pa.mean(), pb.mean()
                    va = ((pa - ma) ** 2).mean()
                    vb = ((pb - mb) ** 2).mean()
                    cov = ((pa - ma) * (pb - mb)).mean()
                    vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def receptive_field_oracle(masks: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """Cell is valid (0) iff some in-bounds cell of its window is valid; out-of-bounds cells count as holes."""
    n, h, w = masks.shape
    ho, wo = (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1
    out = np.ones((n, ho, wo))
    for i in range(ho):
        for j in range(wo):
            cells = [(i * stride + u - pad, j * stride + v - pad) for u in range(k) for v in range(k)]
            cells = [(r, c) for r, c in cells if 0 <= r < h and 0 <= c < w]
            if not cells:
                continue
            rows, cols = zip(*cells)
            any_valid = (masks[:, list(rows), list(cols)] == 0).any(axis=1)
            out[:, i, j] = np.where(any_valid, 0.0, 1.0)
    return out


def all_4x4_masks() -> np.ndarray:
    bits = np.array(list(itertools.product([0.0, 1.0], repeat=16)))
    return bits.reshape(-1, 4, 4)
