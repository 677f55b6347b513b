"""Noise schedules, the forward noising process and the simple denoising loss."""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidRange, StepOutOfRange
from .grid import check_same_shape


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Fixed variance schedule with 1-based steps ``t = 1..T``.

    ``alpha_bar[t - 1]`` holds the cumulative product up to step ``t``;
    :meth:`abar` also accepts ``t = 0`` and returns 1.
    """

    betas: np.ndarray
    alpha_bar: np.ndarray = field(init=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64).copy()
        if betas.ndim != 1 or betas.size == 0:
            raise InvalidRange("betas must be a non-empty 1-D sequence")
        if np.any(betas < 0) or np.any(betas >= 1):
            raise InvalidRange("betas must lie in [0, 1)")
        betas.setflags(write=False)
        abar = np.cumprod(1.0 - betas)
        abar.setflags(write=False)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alpha_bar", abar)

    @property
    def T(self):
        return self.betas.size

    def abar(self, t):
        t = int(t)
        if t == 0:
            return 1.0
        if not 1 <= t <= self.T:
            raise StepOutOfRange(f"step out of range: t={t}, T={self.T}")
        return float(self.alpha_bar[t - 1])

    def abar_array(self, t):
        """Vectorized :meth:`abar` for an integer array of steps."""
        t = np.asarray(t, dtype=np.int64)
        if np.any(t < 0) or np.any(t > self.T):
            raise StepOutOfRange(f"step out of range for T={self.T}")
        full = np.concatenate([[1.0], self.alpha_bar])
        return full[t]


def build_schedule(kind="linear", T=1000, beta_min=1e-4, beta_max=0.02):
    """Build a linear or cosine schedule.

    The cosine kind follows the squared-cosine cumulative curve with offset
    0.008; ``beta_min``/``beta_max`` are validated but its betas are only
    clipped to ``(0, 0.999)``.
    """
    T = int(T)
    if T < 1 or not (0 < beta_min <= beta_max < 1):
        raise InvalidRange(f"invalid range: T={T}, beta_min={beta_min}, beta_max={beta_max}")
    if kind == "linear":
        betas = np.linspace(beta_min, beta_max, T) if T > 1 else np.array([beta_min])
    elif kind == "cosine":
        s = 0.008
        steps = np.arange(T + 1, dtype=np.float64) / T
        f = np.cos((steps + s) / (1 + s) * math.pi / 2) ** 2
        curve = f / f[0]
        betas = np.clip(1.0 - curve[1:] / curve[:-1], 1e-12, 0.999)
    else:
        raise InvalidRange(f"unknown schedule kind {kind!r}")
    return NoiseSchedule(betas)


def forward_diffuse(x0, t, eps, sched):
    """``sqrt(abar_t) x0 + sqrt(1 - abar_t) eps``; ``t`` may be an array over the batch axis."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    check_same_shape(x0, eps)
    if np.ndim(t) == 0:
        if not 1 <= int(t) <= sched.T:
            raise StepOutOfRange(f"step out of range: t={t}, T={sched.T}")
        a = sched.abar(t)
        return math.sqrt(a) * x0 + math.sqrt(1.0 - a) * eps
    t = np.asarray(t)
    if np.any(t < 1):
        raise StepOutOfRange("step out of range")
    a = sched.abar_array(t).reshape(t.shape + (1,) * (x0.ndim - t.ndim))
    return np.sqrt(a) * x0 + np.sqrt(1.0 - a) * eps


def simple_loss(model, x0, t, eps, sched, cond=None):
    """Pixel-mean squared error between predicted and injected noise."""
    xt = forward_diffuse(x0, t, eps, sched)
    pred = model.predict_eps(xt, t, sched, cond=cond)
    return float(np.mean((pred - eps) ** 2))
