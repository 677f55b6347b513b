"""Thermal-spectrum visual prior: matching standardized log-magnitude spectra.

For an image ``I`` the compared quantity is

    N(log(1 + |fftshift(F(I))|)),   N(m) = (m - mean m) / (std m + eps_std),

and the loss is the pixel mean of the squared difference between the
reference and candidate versions.  Statistics are taken per image over the
last two axes, so batches ``(..., H, W)`` are handled image by image.

The magnitude is not differentiable where a frequency bin is exactly zero;
the gradient uses 0 there, and ``log(1 + |.|)`` keeps the map continuous.
"""

from dataclasses import dataclass

import numpy as np

from .grid import as_grid, check_same_shape, fft2, fftshift, ifft2, ifftshift

_AX = (-2, -1)


@dataclass(frozen=True)
class SpectralLossConfig:
    eps_log: float = 0.0
    eps_std: float = 1e-8

    def __post_init__(self):
        if not self.eps_std > 0:
            raise ValueError("eps_std must be positive")
        if self.eps_log < 0:
            raise ValueError("eps_log must be nonnegative")


DEFAULT = SpectralLossConfig()


def magnitude_spectrum(img, cfg=DEFAULT):
    return np.log1p(np.abs(fftshift(fft2(img))) + cfg.eps_log)


def normalize_spectrum(m, cfg=DEFAULT):
    m = np.asarray(m, dtype=np.float64)
    d = m - m.mean(axis=_AX, keepdims=True)
    return d / (d.std(axis=_AX, keepdims=True) + cfg.eps_std)


def _forward(img, cfg):
    spec = fftshift(fft2(img))
    mag = np.abs(spec)
    m = np.log1p(mag + cfg.eps_log)
    d = m - m.mean(axis=_AX, keepdims=True)
    sd = d.std(axis=_AX, keepdims=True)
    return spec, mag, d, sd, d / (sd + cfg.eps_std)


def visual_loss(hr, sr, cfg=DEFAULT):
    """Mean squared difference of normalized log-magnitude spectra (float, or array per image)."""
    hr, sr = as_grid(hr, "hr"), as_grid(sr, "sr")
    check_same_shape(hr, sr)
    r = normalize_spectrum(magnitude_spectrum(hr, cfg), cfg) - normalize_spectrum(magnitude_spectrum(sr, cfg), cfg)
    out = np.mean(r * r, axis=_AX)
    return float(out) if out.ndim == 0 else out


def visual_loss_grad(hr, sr, cfg=DEFAULT):
    """Analytic gradient of :func:`visual_loss` with respect to ``sr``."""
    hr, sr = as_grid(hr, "hr"), as_grid(sr, "sr")
    check_same_shape(hr, sr)
    n = sr.shape[-1] * sr.shape[-2]
    n_hr = normalize_spectrum(magnitude_spectrum(hr, cfg), cfg)
    spec, mag, d, sd, n_sr = _forward(sr, cfg)

    g_n = 2.0 * (n_sr - n_hr) / n
    # standardization: y = d / (sd + e), sd = sqrt(mean(d^2))
    den = sd + cfg.eps_std
    g_m = (g_n - g_n.mean(axis=_AX, keepdims=True)) / den
    with np.errstate(invalid="ignore", divide="ignore"):
        coef = np.where(sd > 0, np.sum(g_n * d, axis=_AX, keepdims=True) / (n * sd * den ** 2), 0.0)
    g_m = g_m - coef * d
    g_mag = g_m / (1.0 + mag + cfg.eps_log)
    with np.errstate(invalid="ignore", divide="ignore"):
        phase = np.where(mag > 0, spec / np.where(mag > 0, mag, 1.0), 0.0)
    g_spec = ifftshift(g_mag * phase)
    # adjoint of the unnormalized forward DFT on real inputs
    return n * ifft2(g_spec)
