"""
Image quality metrics: PSNR and single-scale SSIM.

Both accept `numpy` arrays or tensors holding images in `[0, 1]`, either a single image
`(3, h, w)`, a batch `(n, 3, h, w)` or a grayscale plane `(h, w)`.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import signal

from uhdres.errors import ContractError
from uhdres.errors import ShapeError

PSNR_CAP_DB = 100.0
"""PSNR reported for identical images."""

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
"""ITU-R BT.601 luma coefficients."""


def as_array(x) -> np.ndarray:
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def psnr(pred, target, peak: float = 1.0) -> float:
    """`10·log10(peak² / MSE)`, or `PSNR_CAP_DB` if the images are identical."""
    p, t = as_array(pred), as_array(target)
    if p.shape != t.shape:
        raise ShapeError(f"PSNR needs equal shapes, got {list(p.shape)} and {list(t.shape)}.")
    mse = float(np.mean((p - t) ** 2))
    if mse == 0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(peak * peak / mse), PSNR_CAP_DB)


def to_luma(x) -> np.ndarray:
    """Convert `(3, h, w)` or `(n, 3, h, w)` RGB to `(h, w)` / `(n, h, w)` luma; pass `(h, w)` through."""
    a = as_array(x)
    if a.ndim == 2:
        return a
    if a.ndim in (3, 4) and a.shape[-3] == 3:
        return np.tensordot(LUMA_WEIGHTS, a, axes=([0], [a.ndim - 3]))
    raise ShapeError(f"Expected an RGB image or a grayscale plane, got shape {list(a.shape)}.")


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _ssim_plane(x: np.ndarray, y: np.ndarray, window: np.ndarray, peak: float) -> float:
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2

    def filt(a):
        return signal.convolve2d(a, window, mode="valid")

    mu_x, mu_y = filt(x), filt(y)
    sxx = filt(x * x) - mu_x**2
    syy = filt(y * y) - mu_y**2
    sxy = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(pred, target, peak: float = 1.0) -> float:
    """
    Single-scale SSIM on ITU-R 601 luma with an 11×11 Gaussian window (σ = 1.5), averaged over
    all valid window positions (and over the batch, if any).
    """
    x, y = to_luma(pred), to_luma(target)
    if x.shape != y.shape:
        raise ShapeError(f"SSIM needs equal shapes, got {list(x.shape)} and {list(y.shape)}.")
    if min(x.shape[-2:]) < SSIM_WINDOW:
        raise ContractError(
            f"SSIM needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW} pixels, got {x.shape[-2]}×{x.shape[-1]}."
        )
    window = gaussian_window()
    if x.ndim == 2:
        return _ssim_plane(x, y, window, peak)
    return float(np.mean([_ssim_plane(a, b, window, peak) for a, b in zip(x, y)]))
