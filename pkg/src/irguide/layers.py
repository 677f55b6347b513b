"""Small reverse-mode building blocks for fixed-size conv stacks.

Tensors are laid out ``(B, C, H, W)``.  Convolutions use zero "same"
padding with odd square kernels; every forward has a matching backward
that returns cotangents for inputs and parameters.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit


def _patches(x, k):
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    return sliding_window_view(xp, (k, k), axis=(2, 3))  # B, Ci, H, W, k, k


def conv2d(x, w, b=None, stride=1):
    k = w.shape[-1]
    if k % 2 != 1 or w.shape[-2] != k:
        raise ValueError("kernels must be odd and square")
    cols = _patches(x, k)
    if stride > 1:
        cols = cols[:, :, ::stride, ::stride]
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b[None, :, None, None]
    return np.ascontiguousarray(out)


def conv2d_backward(gout, x, w, stride=1, need_params=True):
    """Return ``(dx, dw, db)``; ``dw``/``db`` are None unless ``need_params``."""
    if stride > 1:
        g = np.zeros(gout.shape[:2] + x.shape[2:])
        g[:, :, ::stride, ::stride] = gout
    else:
        g = gout
    flipped = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    dx = conv2d(g, flipped)
    if not need_params:
        return dx, None, None
    cols = _patches(x, w.shape[-1])
    dw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
    db = g.sum(axis=(0, 2, 3))
    return dx, dw, db


def activation(name, x):
    if name == "tanh":
        return np.tanh(x)
    if name == "silu":
        return x * expit(x)
    if name == "identity":
        return x
    raise ValueError(f"unknown activation {name!r}")


def activation_backward(name, x, gout):
    if name == "tanh":
        return gout * (1.0 - np.tanh(x) ** 2)
    if name == "silu":
        s = expit(x)
        return gout * (s + x * s * (1.0 - s))
    if name == "identity":
        return gout
    raise ValueError(f"unknown activation {name!r}")


def sinusoidal_embedding(t, dim):
    """Sin/cos features of integer steps; ``t`` scalar or shape ``(B,)``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def uniform_fan_in(rng, shape, fan_in, gain=1.0):
    bound = gain * np.sqrt(6.0 / fan_in)
    return rng.uniform(shape, -bound, bound)
