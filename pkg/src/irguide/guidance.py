"""Loss-gradient guidance: turning losses on the clean-image estimate into noise corrections.

A :class:`GuidanceTerm` wraps a loss ``L(x0_hat)`` and its gradient.  At a
sampling step the gradient is pulled back to ``x_t`` through the
clean-image prediction and added to the predicted noise,

    eps' = eps + sqrt(1 - abar_t) * sum_i rho_i * clip(grad_i),

which is the same as subtracting ``rho_i * grad_i`` from the score
``-eps / sqrt(1 - abar_t)``.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import perceptual, spectral
from .degradation import degrade, degrade_adjoint
from .denoiser import predict_x0
from .errors import DegenerateStep, ShapeMismatch
from .grid import check_same_shape

THROUGH_DENOISER = "through_denoiser"
X0_DETACHED = "x0_detached"


@dataclass
class GuidanceTerm:
    name: str
    rho: float
    loss: Callable
    gradient: Callable
    target: object = None
    decay: bool = False  # scale rho by sqrt(1 - abar_t)
    policy: Optional["GuidancePolicy"] = None  # overrides the sampler-wide policy

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")

    def effective_rho(self, t, sched):
        if self.decay:
            return self.rho * math.sqrt(1.0 - sched.abar(t))
        return self.rho


@dataclass
class GuidancePolicy:
    """When and how guidance applies.

    ``t_start``/``t_end`` bound the active window (inclusive, ``t_end <=
    t_start``; None means unbounded).  ``clip`` is the per-image RMS cap on
    each pulled-back gradient, or None to disable clipping.
    """

    t_start: Optional[int] = None
    t_end: Optional[int] = None
    clip: Optional[float] = 1.0
    jacobian_mode: str = THROUGH_DENOISER

    def __post_init__(self):
        if self.jacobian_mode not in (THROUGH_DENOISER, X0_DETACHED):
            raise ValueError(f"unknown jacobian mode {self.jacobian_mode!r}")
        if self.clip is not None and not self.clip > 0:
            raise ValueError("clip threshold must be positive")
        if self.t_end is not None and self.t_end < 1:
            raise ValueError("t_end must be >= 1")
        if self.t_start is not None and self.t_end is not None and self.t_end > self.t_start:
            raise ValueError("need t_end <= t_start")

    def active(self, t):
        return (self.t_start is None or t <= self.t_start) and (self.t_end is None or t >= self.t_end)


def noise_to_score(eps, t, sched):
    one_minus = 1.0 - sched.abar(t)
    if one_minus < 1e-12:
        raise DegenerateStep(f"degenerate step: 1 - abar_{t} = {one_minus:.3e}")
    return -np.asarray(eps, dtype=np.float64) / math.sqrt(one_minus)


def score_to_noise(score, t, sched):
    one_minus = 1.0 - sched.abar(t)
    if one_minus < 1e-12:
        raise DegenerateStep(f"degenerate step: 1 - abar_{t} = {one_minus:.3e}")
    return -math.sqrt(one_minus) * np.asarray(score, dtype=np.float64)


def pullback(g_x0, x_t, t, model, policy, sched, cond=None, vjp=None):
    """Map a cotangent on ``x0_hat`` to one on ``x_t``.

    ``vjp`` may be supplied to reuse a cached forward pass of the model.
    """
    a = sched.abar(t)
    if policy.jacobian_mode == X0_DETACHED:
        return g_x0 / math.sqrt(a)
    jt = vjp(g_x0) if vjp is not None else model.eps_vjp(x_t, t, g_x0, sched, cond=cond)
    return (g_x0 - math.sqrt(1.0 - a) * jt) / math.sqrt(a)


def guidance_grad_xt(term, x_t, eps, t, model, policy, sched, cond=None, vjp=None):
    """Gradient of ``term.loss(x0_hat(x_t))`` with respect to ``x_t``."""
    x0_hat = predict_x0(x_t, eps, t, sched)
    return pullback(term.gradient(x0_hat), x_t, t, model, policy, sched, cond, vjp)


def rms(g):
    g = np.asarray(g)
    return np.sqrt(np.mean(g * g, axis=(-2, -1)))


def clip_rms(g, threshold):
    if threshold is None:
        return g
    r = rms(g)
    factor = np.where(r > threshold, threshold / np.where(r > 0, r, 1.0), 1.0)
    if np.ndim(factor) == 0:
        return g * float(factor) if factor != 1.0 else g
    return g * factor[..., None, None]


def adjust_noise(eps, grads, t, sched, policy=None):
    """Add ``sqrt(1 - abar_t) * sum(rho * clip(grad))`` to ``eps``.

    ``grads`` is a list of ``(rho, grad_xt)`` pairs; zero-``rho`` entries are
    skipped so an all-zero list returns ``eps`` unchanged.
    """
    eps = np.asarray(eps, dtype=np.float64)
    threshold = None if policy is None else policy.clip
    total = None
    for rho, g in grads:
        check_same_shape(eps, g)
        if rho == 0:
            continue
        step = rho * clip_rms(np.asarray(g, dtype=np.float64), threshold)
        total = step if total is None else total + step
    if total is None:
        return eps
    return eps + math.sqrt(1.0 - sched.abar(t)) * total


# -- term factories ----------------------------------------------------------

def _per_image_sum(r):
    out = np.sum(r * r, axis=(-2, -1))
    return float(out) if out.ndim == 0 else out


def _check_broadcast(target, x0):
    if np.shape(x0)[np.ndim(x0) - np.ndim(target):] != np.shape(target):
        raise ShapeMismatch(f"shape mismatch: target {np.shape(target)} vs {np.shape(x0)}")


def make_identity_term(target, rho, name="identity", decay=False):
    """``||g - x0||^2`` with the identity forward operator.

    ``target`` may omit leading batch axes; it is then shared by every image.
    """
    target = np.asarray(target, dtype=np.float64)

    def loss(x0):
        _check_broadcast(target, x0)
        return _per_image_sum(target - x0)

    def gradient(x0):
        _check_broadcast(target, x0)
        return -2.0 * (target - x0)

    return GuidanceTerm(name, rho, loss, gradient, target, decay)


def make_data_fidelity_term(lr, degrade_model, rho, name="data_fidelity", decay=False):
    """``||lr - degrade(x0)||^2``; the gradient uses the exact adjoint."""
    lr = np.asarray(lr, dtype=np.float64)

    def _resid(x0):
        if degrade_model.lr_shape(np.shape(x0)) != lr.shape:
            raise ShapeMismatch(f"shape mismatch: degrade{np.shape(x0)} does not match lr {lr.shape}")
        return lr - degrade(x0, degrade_model)

    def loss(x0):
        return _per_image_sum(_resid(x0))

    def gradient(x0):
        return -2.0 * degrade_adjoint(_resid(x0), degrade_model)

    return GuidanceTerm(name, rho, loss, gradient, lr, decay)


def make_visual_term(reference, rho, cfg=spectral.DEFAULT, name="visual", decay=False):
    reference = np.asarray(reference, dtype=np.float64)
    return GuidanceTerm(
        name, rho,
        lambda x0: spectral.visual_loss(reference, x0, cfg),
        lambda x0: spectral.visual_loss_grad(reference, x0, cfg),
        reference, decay,
    )


def make_perceptual_term(reference, rho, fe, seg, feature_weight=1.0, mask_weight=1.0,
                         name="perceptual", decay=False):
    reference = np.asarray(reference, dtype=np.float64)
    kw = dict(feature_weight=feature_weight, mask_weight=mask_weight)
    return GuidanceTerm(
        name, rho,
        lambda x0: perceptual.perceptual_loss(reference, x0, fe, seg, **kw),
        lambda x0: perceptual.perceptual_loss_grad(reference, x0, fe, seg, **kw),
        reference, decay,
    )
