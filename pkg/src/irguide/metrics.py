"""Reference image-quality metrics."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeMismatch
from .grid import check_same_shape

PSNR_CAP = 99.0


def psnr(a, b, peak=1.0):
    """Peak signal-to-noise ratio in dB; identical inputs give ``PSNR_CAP``."""
    check_same_shape(a, b)
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse))


def ssim(a, b, peak=1.0, win=8):
    """Mean SSIM over all ``win x win`` windows (stride 1, uniform weights).

    Local statistics are population (1/N) moments; stabilizers are
    ``C1 = (0.01 peak)^2`` and ``C2 = (0.03 peak)^2``.
    """
    check_same_shape(a, b)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeMismatch("ssim expects single (H, W) images")
    if min(a.shape) < win:
        raise ValueError(f"too small: {a.shape} smaller than {win}x{win} window")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    wa = sliding_window_view(a, (win, win))
    wb = sliding_window_view(b, (win, win))
    mu_a = wa.mean(axis=(-2, -1))
    mu_b = wb.mean(axis=(-2, -1))
    var_a = (wa * wa).mean(axis=(-2, -1)) - mu_a ** 2
    var_b = (wb * wb).mean(axis=(-2, -1)) - mu_b ** 2
    cov = (wa * wb).mean(axis=(-2, -1)) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
