"""Linear low-resolution synthesis (periodic blur + block averaging) and its adjoint."""

from dataclasses import dataclass, field

import numpy as np

from .errors import IndivisibleDimensions, ShapeMismatch
from .grid import as_grid


def gaussian_kernel(size=5, std=1.0):
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-0.5 * (r / std) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def identity_kernel():
    return np.ones((1, 1))


@dataclass(frozen=True)
class DegradationModel:
    scale: int = 4
    kernel: np.ndarray = field(default_factory=gaussian_kernel)
    noise_std: float = 0.0

    def __post_init__(self):
        k = np.array(self.kernel, dtype=np.float64)
        if k.ndim != 2 or np.any(k < 0) or abs(k.sum() - 1.0) > 1e-12:
            raise ValueError("blur kernel must be a nonnegative 2-D grid summing to 1")
        if self.scale < 1 or self.noise_std < 0:
            raise ValueError("scale must be >= 1 and noise_std >= 0")
        k.setflags(write=False)
        object.__setattr__(self, "kernel", k)

    def lr_shape(self, hr_shape):
        H, W = hr_shape[-2:]
        if H % self.scale or W % self.scale:
            raise IndivisibleDimensions(f"indivisible dimensions {H}x{W} for scale {self.scale}")
        return tuple(hr_shape[:-2]) + (H // self.scale, W // self.scale)


def _kernel_spectrum(kernel, H, W):
    kh, kw = kernel.shape
    if kh > H or kw > W:
        raise ShapeMismatch("blur kernel larger than image")
    pad = np.zeros((H, W))
    pad[:kh, :kw] = kernel
    # centre tap at the origin so the blur does not translate the image
    pad = np.roll(pad, (-(kh // 2), -(kw // 2)), axis=(0, 1))
    return np.fft.fft2(pad)


def blur(x, kernel, adjoint=False):
    """Circular convolution (or its adjoint, circular correlation)."""
    K = _kernel_spectrum(kernel, *x.shape[-2:])
    if adjoint:
        K = np.conj(K)
    return np.fft.ifft2(np.fft.fft2(x, axes=(-2, -1)) * K, axes=(-2, -1)).real


def _pool(x, s):
    H, W = x.shape[-2:]
    return x.reshape(x.shape[:-2] + (H // s, s, W // s, s)).mean(axis=(-3, -1))


def degrade(hr, d, rng=None):
    """Blur, average-pool by ``d.scale``, then optionally add clamped Gaussian noise."""
    hr = as_grid(hr, "hr")
    d.lr_shape(hr.shape)
    out = _pool(blur(hr, d.kernel), d.scale)
    if rng is not None and d.noise_std > 0:
        out = np.clip(out + d.noise_std * rng.normal(out.shape), 0.0, 1.0)
    return out


def degrade_adjoint(lr_residual, d, hr_shape=None):
    """Transpose of the noise-free :func:`degrade` map."""
    r = np.asarray(lr_residual, dtype=np.float64)
    s = d.scale
    if hr_shape is not None and d.lr_shape(hr_shape) != r.shape:
        raise ShapeMismatch(f"shape mismatch: residual {r.shape} vs hr {hr_shape}")
    up = np.repeat(np.repeat(r, s, axis=-2), s, axis=-1) / (s * s)
    return blur(up, d.kernel, adjoint=True)


def _cubic(x, a=-0.5):
    x = np.abs(x)
    return np.where(
        x <= 1, (a + 2) * x ** 3 - (a + 3) * x ** 2 + 1,
        np.where(x < 2, a * x ** 3 - 5 * a * x ** 2 + 8 * a * x - 4 * a, 0.0),
    )


def _bicubic_matrix(n_in, scale):
    n_out = n_in * scale
    centres = (np.arange(n_out) + 0.5) / scale - 0.5
    base = np.floor(centres).astype(int)
    mat = np.zeros((n_out, n_in))
    for off in range(-1, 3):
        idx = base + off
        w = _cubic(centres - idx)
        np.add.at(mat, (np.arange(n_out), np.clip(idx, 0, n_in - 1)), w)
    return mat


def upsample_bicubic(lr, scale):
    """Keys bicubic (a = -0.5) upsampling with pixel-centre alignment and edge replication."""
    lr = np.asarray(lr, dtype=np.float64)
    Uh = _bicubic_matrix(lr.shape[-2], scale)
    Uw = _bicubic_matrix(lr.shape[-1], scale)
    return Uh @ lr @ Uw.T
