"""Image quality metrics on [0, 1] float arrays."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("empty inputs")
    for name, arr in (("first", a), ("second", b)):
        if arr.min() < -1e-6 or arr.max() > 1.0 + 1e-6:
            raise ValueError(f"{name} input must lie in [0, 1]")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for unit-range images.

    Identical inputs return +inf.
    """
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 2D Gaussian weighting window."""
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def _windowed_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # (H', W', win, win) valid windows weighted by the kernel.
    windows = sliding_window_view(img, kernel.shape)
    return np.einsum("ijkl,kl->ij", windows, kernel)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity over valid (fully interior) windows.

    Grayscale inputs are compared directly; RGB inputs are averaged over
    channels.  Uses an 11x11 Gaussian window (sigma 1.5) and the standard
    stabilizers for unit dynamic range.
    """
    a, b = _check_pair(a, b)
    if a.ndim == 3 and a.shape[-1] == 3:
        return float(np.mean([_ssim_single(a[..., c], b[..., c]) for c in range(3)]))
    if a.ndim != 2:
        raise ValueError(f"ssim expects (H, W) or (H, W, 3) images, got shape {a.shape}")
    return _ssim_single(a, b)


def _ssim_single(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError(
            f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for ssim, got {a.shape}"
        )
    kernel = gaussian_window()
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    mu_a = _windowed_mean(a, kernel)
    mu_b = _windowed_mean(b, kernel)
    mu_aa = _windowed_mean(a * a, kernel)
    mu_bb = _windowed_mean(b * b, kernel)
    mu_ab = _windowed_mean(a * b, kernel)
    var_a = mu_aa - mu_a**2
    var_b = mu_bb - mu_b**2
    cov = mu_ab - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
