"""PSNR and SSIM on images stored in [-1, 1] (scored on the [0, 1] scale)."""
from __future__ import annotations

import math

import numpy as np

PSNR_CAP = 100.0
SSIM_WINDOW = 8
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _unit(a) -> np.ndarray:
    return (np.asarray(a, dtype=np.float64) + 1.0) / 2.0


def _check_pair(x_hat, x) -> tuple[np.ndarray, np.ndarray]:
    a, b = _unit(x_hat), _unit(x)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(x_hat, x) -> float:
    """``10 log10(1 / MSE)``; identical inputs give ``inf``."""
    a, b = _check_pair(x_hat, x)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def cap_psnr(value: float) -> float:
    return min(value, PSNR_CAP)


def _window_mean(a: np.ndarray) -> np.ndarray:
    """Means over every 8x8 window of the last two axes (stride 1), via an integral image."""
    k = SSIM_WINDOW
    c = np.zeros(a.shape[:-2] + (a.shape[-2] + 1, a.shape[-1] + 1))
    c[..., 1:, 1:] = a.cumsum(axis=-2).cumsum(axis=-1)
    return (c[..., k:, k:] - c[..., :-k, k:] - c[..., k:, :-k] + c[..., :-k, :-k]) / (k * k)


def ssim(x_hat, x) -> float:
    """Mean SSIM over all valid 8x8 windows (stride 1), averaged across channels.

    Accepts ``[C, H, W]`` or ``[N, C, H, W]``; a batch is scored per image and
    averaged. Window statistics use population (1/64) moments.
    """
    a, b = _check_pair(x_hat, x)
    if a.ndim not in (3, 4):
        raise ValueError(f"expected [C,H,W] or [N,C,H,W], got shape {a.shape}")
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs images at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape[-2:]}")
    mu_a, mu_b = _window_mean(a), _window_mean(b)
    var_a = _window_mean(a * a) - mu_a ** 2
    var_b = _window_mean(b * b) - mu_b ** 2
    cov = _window_mean(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


def batch_psnr(x_hat, x) -> float:
    """Mean of per-image PSNR, each capped."""
    a, b = np.asarray(x_hat), np.asarray(x)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean([cap_psnr(psnr(a[i], b[i])) for i in range(a.shape[0])]))
