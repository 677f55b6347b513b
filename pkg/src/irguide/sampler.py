"""Guided DDIM reverse process."""

import json
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .denoiser import predict_x0
from .errors import NegativeRadicand, NonFiniteState, ShapeMismatch, StepOutOfRange
from .grid import Rng
from .guidance import THROUGH_DENOISER, GuidancePolicy, adjust_noise, clip_rms, pullback, rms

PURE_NOISE = "pure_noise"
LR_PLUS_NOISE = "lr_plus_noise"


@dataclass
class SamplerConfig:
    num_steps: int = 50
    eta: float = 0.0
    seed: int = 0
    terms: list = field(default_factory=list)
    policy: GuidancePolicy = field(default_factory=GuidancePolicy)
    init: str = PURE_NOISE
    clip_output: Optional[Tuple[float, float]] = (0.0, 1.0)
    record: bool = False
    start_t: Optional[int] = None

    def __post_init__(self):
        if self.num_steps < 1:
            raise ValueError("num_steps must be >= 1")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")
        if self.init not in (PURE_NOISE, LR_PLUS_NOISE):
            raise ValueError(f"unknown init mode {self.init!r}")
        if self.start_t is not None and self.start_t < 1:
            raise ValueError("start_t must be >= 1")


@dataclass
class StepRecord:
    t: int
    x_t: np.ndarray
    x0_hat: np.ndarray
    losses: dict
    grad_rms: dict


@dataclass
class Trajectory:
    steps: List[StepRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.steps)

    def records(self):
        """JSON-ready per-step summaries: step index, t, per-term loss and gradient RMS."""
        out = []
        for i, s in enumerate(self.steps):
            out.append({
                "step": i, "t": s.t,
                "loss": {k: np.asarray(v).tolist() for k, v in s.losses.items()},
                "grad_rms": {k: np.asarray(v).tolist() for k, v in s.grad_rms.items()},
            })
        return out

    def dump(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec) + "\n")


def step_grid(T, num_steps):
    """Evenly spaced steps from ``T`` down to 1 (both included)."""
    if not 1 <= num_steps <= T:
        raise ValueError(f"num_steps must lie in [1, {T}]")
    if num_steps == 1:
        return np.array([T])
    return np.round(np.linspace(T, 1, num_steps)).astype(np.int64)


def sigma_schedule(eta, sched, grid):
    """Per-step noise scale; the step after the last grid entry is t = 0."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    sig = []
    for i, t in enumerate(grid):
        t_prev = int(grid[i + 1]) if i + 1 < len(grid) else 0
        a, ap = sched.abar(int(t)), sched.abar(t_prev)
        sig.append(eta * math.sqrt((1 - ap) / (1 - a)) * math.sqrt(1 - a / ap))
    return np.array(sig)


def ddim_step(x_t, eps, t, t_prev, sigma_t, z, sched):
    a_prev = sched.abar(t_prev)
    rad = 1.0 - a_prev - sigma_t ** 2
    if rad < 0:
        if rad < -1e-12:
            raise NegativeRadicand(f"negative radicand {rad:.3e} at t={t}")
        rad = 0.0
    x0 = predict_x0(x_t, eps, t, sched)
    out = math.sqrt(a_prev) * x0 + math.sqrt(rad) * eps
    if sigma_t != 0:
        out = out + sigma_t * z
    return out


def guided_sample(model, sched, cfg, cond=None, shape=None, noise=None):
    """Run the reverse process; returns ``(sample, trajectory)``.

    ``cond`` (the upsampled LR image, batch allowed) is passed to the model
    and, in ``lr_plus_noise`` mode, seeds the initial state.  ``shape`` is
    needed only when there is no ``cond``.  With ``start_t`` set the chain
    starts at that step instead of ``T`` (a shortened, partially noised
    chain; only meaningful together with ``lr_plus_noise``).  ``noise``
    replaces the seeded standard-normal draw for the initial state.
    """
    if cfg.init == LR_PLUS_NOISE and cond is None:
        raise ValueError("lr_plus_noise initialization requires cond")
    if shape is None and noise is not None:
        shape = np.shape(noise)
    if shape is None:
        if cond is None:
            raise ValueError("shape or cond required")
        shape = np.shape(cond)
    rng = Rng(cfg.seed)
    top = sched.T if cfg.start_t is None else cfg.start_t
    if top > sched.T:
        raise StepOutOfRange(f"start_t={top} exceeds T={sched.T}")
    grid = step_grid(top, cfg.num_steps)
    sigmas = sigma_schedule(cfg.eta, sched, grid)
    a_T = sched.abar(int(grid[0]))
    if noise is None:
        x = rng.normal(shape)
    else:
        x = np.array(noise, dtype=np.float64)
        if x.shape != tuple(shape):
            raise ShapeMismatch(f"shape mismatch: noise {x.shape} vs {tuple(shape)}")
    if cfg.init == LR_PLUS_NOISE:
        x = math.sqrt(a_T) * np.asarray(cond, dtype=np.float64) + math.sqrt(1.0 - a_T) * x
    traj = Trajectory()
    policy = cfg.policy
    for i, t in enumerate(grid):
        t = int(t)
        t_prev = int(grid[i + 1]) if i + 1 < len(grid) else 0
        active = []
        for term in cfg.terms:
            pol = term.policy or policy
            if pol.active(t) and term.effective_rho(t, sched) > 0:
                active.append((term, pol))
        vjp = None
        if (any(pol.jacobian_mode == THROUGH_DENOISER for _, pol in active)
                and hasattr(model, "eps_and_vjp")):
            eps, vjp = model.eps_and_vjp(x, t, sched, cond=cond)
        else:
            eps = model.predict_eps(x, t, sched, cond=cond)
        x0_hat = predict_x0(x, eps, t, sched)
        grads, grad_rms = [], {}
        for term, pol in active:
            g = pullback(term.gradient(x0_hat), x, t, model, pol, sched, cond, vjp)
            grad_rms[term.name] = rms(g)
            grads.append((term.effective_rho(t, sched), clip_rms(g, pol.clip)))
        eps_adj = adjust_noise(eps, grads, t, sched)
        if cfg.record:
            losses = {term.name: term.loss(x0_hat) for term in cfg.terms}
            traj.steps.append(StepRecord(t, x.copy(), x0_hat, losses, grad_rms))
        z = rng.normal(shape) if sigmas[i] > 0 else None
        x = ddim_step(x, eps_adj, t, t_prev, float(sigmas[i]), z, sched)
        if not np.all(np.isfinite(x)):
            raise NonFiniteState(t)
    if cfg.clip_output is not None:
        x = np.clip(x, *cfg.clip_output)
    return x, traj
