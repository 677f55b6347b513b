"""Raster helpers, the 2D DFT convention, and seeded randomness.

Images are plain ``float64`` numpy arrays of shape ``(H, W)``.  Most
functions in the package also accept leading batch axes ``(..., H, W)`` and
operate on the trailing two.

DFT convention: the forward transform is unnormalized,

    F(u, v) = sum_x sum_y I(x, y) exp(-2i pi u x / H) exp(-2i pi v y / W),

and the inverse carries the ``1/(HW)`` factor.  Any size is supported
(numpy's pocketfft is mixed-radix with a Bluestein fallback), so no padding
or cropping takes place.
"""

import numpy as np

from .errors import NonRealInverse, ShapeMismatch

IMAG_TOL = 1e-9


def as_grid(x, name="image"):
    """Return ``x`` as a float64 array with at least two axes, all finite."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim < 2:
        raise ShapeMismatch(f"{name} must have at least 2 dimensions, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def check_same_shape(a, b):
    if np.shape(a) != np.shape(b):
        raise ShapeMismatch(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


def fft2(img):
    """Unnormalized forward DFT over the last two axes."""
    return np.fft.fft2(as_grid(img), axes=(-2, -1))


def ifft2(spec, tol=IMAG_TOL):
    """Inverse DFT with ``1/(HW)`` scaling, returning a real grid.

    Imaginary residue up to ``tol`` is dropped; anything larger means the
    spectrum was not conjugate-symmetric and raises :class:`NonRealInverse`.
    """
    spec = np.asarray(spec, dtype=np.complex128)
    if not np.all(np.isfinite(spec)):
        raise ValueError("spectrum contains non-finite values")
    out = np.fft.ifft2(spec, axes=(-2, -1))
    resid = np.max(np.abs(out.imag), initial=0.0)
    if resid > tol:
        raise NonRealInverse(f"non-real inverse: imaginary residue {resid:.3e}")
    return out.real.copy()


def fftshift(spec):
    """Move the zero-frequency bin to ``(H // 2, W // 2)``."""
    return np.fft.fftshift(spec, axes=(-2, -1))


def ifftshift(spec):
    return np.fft.ifftshift(spec, axes=(-2, -1))


# elementwise arithmetic; numpy does the work, these only add the shape contract

def _binary(a, b):
    a = np.asarray(a, dtype=np.float64)
    if np.ndim(b) == 0:
        return a, float(b)
    b = np.asarray(b, dtype=np.float64)
    check_same_shape(a, b)
    return a, b


def add(a, b):
    a, b = _binary(a, b)
    return a + b


def sub(a, b):
    a, b = _binary(a, b)
    return a - b


def scale(a, s):
    return float(s) * np.asarray(a, dtype=np.float64)


def hadamard(a, b):
    a, b = _binary(a, b)
    return a * b


def mean(a):
    return float(np.mean(a))


def variance(a):
    """Population variance over all pixels."""
    return float(np.var(a))


def l2_norm_sq(a, b=0.0):
    a, b = _binary(a, b)
    return float(np.sum((a - b) ** 2))


class Rng:
    """Seeded source of uniform and standard-normal samples.

    Backed by the Philox counter-based generator, so a seed fully determines
    the stream independent of platform.  Normals come from numpy's ziggurat
    transform of that stream.  Use :meth:`split` to hand independent
    generators to concurrent chains; an instance itself is single-owner.
    """

    def __init__(self, seed=0, _seed_seq=None):
        self.seed = int(seed)
        self._ss = _seed_seq if _seed_seq is not None else np.random.SeedSequence(self.seed)
        self._gen = np.random.Generator(np.random.Philox(self._ss))

    def normal(self, shape=()):
        return self._gen.standard_normal(shape)

    def uniform(self, shape=(), low=0.0, high=1.0):
        return self._gen.uniform(low, high, shape)

    def integers(self, low, high=None, shape=None):
        return self._gen.integers(low, high, size=shape)

    def split(self, n):
        """Return ``n`` independent child generators (deterministic in the seed)."""
        return [Rng(self.seed, _seed_seq=ss) for ss in self._ss.spawn(n)]

    def __repr__(self):
        return f"Rng(seed={self.seed})"
