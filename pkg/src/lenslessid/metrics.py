"""Image quality metrics: PSNR and Gaussian-windowed SSIM."""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import fftconvolve

from .errors import ContractError

PSNR_CAP_DB = 99.0


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE), capped at 99 dB for (near-)identical inputs."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"psnr shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-12:
        return PSNR_CAP_DB
    return 10.0 * math.log10(peak**2 / mse)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    radius = size // 2
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-0.5 * (x / sigma) ** 2)
    g /= g.sum()
    return np.outer(g, g)


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0, window: int = 11,
         sigma: float = 1.5) -> float:
    """Mean local SSIM with a Gaussian window and standard stabilizers.

    Weighted local moments are evaluated on the valid (fully-overlapping)
    region only, matching the reference formulation with Gaussian weights.
    Multi-channel inputs average the per-channel scores.
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"ssim shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 3:
        return float(np.mean([ssim(a[..., c], b[..., c], peak, window, sigma)
                              for c in range(a.shape[2])]))
    if min(a.shape) < window:
        raise ContractError(f"image {a.shape} smaller than the {window}x{window} window")

    kernel = _gaussian_window(window, sigma)
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2

    def smooth(img):
        return fftconvolve(img, kernel, mode="valid")

    mu_a, mu_b = smooth(a), smooth(b)
    var_a = smooth(a * a) - mu_a**2
    var_b = smooth(b * b) - mu_b**2
    cov = smooth(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
