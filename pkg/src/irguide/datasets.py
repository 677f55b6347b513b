"""Synthetic thermal-style imagery.

Each image is a smooth background built from a few anisotropic Gaussian
"heat sources", overlaid with hot rectangles and bars (vehicle- and
pedestrian-like silhouettes) that carry the sharp edges, then min-max
normalized to [0, 1].
"""

import numpy as np

from .grid import Rng


def _blob(yy, xx, rng, size):
    cy, cx = rng.uniform(2, 0, size)
    sy, sx = rng.uniform(2, 0.1 * size, 0.45 * size)
    amp = rng.uniform((), 0.2, 1.0)
    return amp * np.exp(-0.5 * (((yy - cy) / sy) ** 2 + ((xx - cx) / sx) ** 2))


def _shape(img, rng, size):
    kind = rng.integers(0, 3)
    if kind == 0:  # vehicle-like box
        h, w = rng.integers(size // 10, size // 4 + 1, shape=2)
    elif kind == 1:  # pedestrian-like upright bar
        h = rng.integers(size // 6, size // 3 + 1)
        w = max(2, int(h) // 4)
    else:  # pole / road edge
        h, w = (int(rng.integers(size // 3, size)), 2) if rng.uniform() < 0.5 else (2, int(rng.integers(size // 3, size)))
    y = rng.integers(0, size - h + 1)
    x = rng.integers(0, size - w + 1)
    level = rng.uniform((), 0.6, 1.4)
    img[y:y + h, x:x + w] = np.maximum(img[y:y + h, x:x + w], level)


def synth_thermal_dataset(n, size, rng):
    """Return an ``(n, size, size)`` stack of images in [0, 1]; ``size >= 16``."""
    if size < 16:
        raise ValueError("size must be at least 16")
    if not isinstance(rng, Rng):
        rng = Rng(rng)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    out = np.empty((n, size, size))
    for i in range(n):
        img = np.zeros((size, size))
        for _ in range(int(rng.integers(2, 6))):
            img += _blob(yy, xx, rng, size)
        for _ in range(int(rng.integers(1, 5))):
            _shape(img, rng, size)
        img -= img.min()
        img /= img.max()
        out[i] = img
    return out
