"""Noise predictors: a closed-form Gaussian oracle and a small trainable conv net.

Both backends expose the same two methods::

    predict_eps(x_t, t, sched, cond=None) -> eps
    eps_vjp(x_t, t, cotangent, sched, cond=None) -> J^T cotangent

where ``J`` is the Jacobian of the predicted noise with respect to ``x_t``.
Inputs may carry a leading batch axis.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import layers
from .errors import DegenerateAlpha, Divergence, MissingCondition, ShapeMismatch
from .files import load_container, save_container
from .grid import Rng, check_same_shape
from .schedule import forward_diffuse

log = logging.getLogger(__name__)


def predict_x0(x_t, eps, t, sched):
    """Clean-image estimate ``(x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t)``."""
    a = sched.abar(t)
    if a < 1e-12:
        raise DegenerateAlpha(f"degenerate alpha: abar_{t} = {a:.3e}")
    return (np.asarray(x_t) - math.sqrt(1.0 - a) * np.asarray(eps)) / math.sqrt(a)


class AnalyticGaussian:
    """Exact noise predictor for data distributed as ``N(mu, sigma2 I)``.

    The marginal of ``x_t`` is Gaussian with mean ``sqrt(abar) mu`` and
    variance ``abar sigma2 + 1 - abar``, so its score and hence the optimal
    noise prediction are available in closed form.
    """

    def __init__(self, mu, sigma2):
        if sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")
        self.mu = np.asarray(mu, dtype=np.float64)
        self.sigma2 = float(sigma2)

    def _gain(self, t, sched):
        a = sched.abar(t)
        return a, math.sqrt(1.0 - a) / (a * self.sigma2 + 1.0 - a)

    def predict_eps(self, x_t, t, sched, cond=None):
        x_t = np.asarray(x_t, dtype=np.float64)
        if x_t.shape[-self.mu.ndim:] != self.mu.shape:
            raise ShapeMismatch(f"shape mismatch: {x_t.shape} vs mu {self.mu.shape}")
        a, gain = self._gain(t, sched)
        return gain * (x_t - math.sqrt(a) * self.mu)

    def eps_vjp(self, x_t, t, cotangent, sched, cond=None):
        check_same_shape(x_t, cotangent)
        return self._gain(t, sched)[1] * np.asarray(cotangent, dtype=np.float64)

    def posterior_mean(self, x_t, t, sched):
        """``E[x0 | x_t]`` from the conditional-Gaussian formula."""
        a = sched.abar(t)
        return (self.sigma2 * math.sqrt(a) * x_t + (1.0 - a) * self.mu) / (a * self.sigma2 + 1.0 - a)


@dataclass
class _Cache:
    inputs: np.ndarray
    pre: list
    acts: list
    u_scale: np.ndarray
    skip_gain: np.ndarray
    raw_gain: np.ndarray
    s: np.ndarray
    out_gain: np.ndarray


class ConvDenoiser:
    """Preconditioned conv net predicting noise from ``(x_t, t[, cond])``.

    The prior mean ``m`` is the conditioning image (upsampled LR) when the
    model is conditioned, otherwise a scalar data mean; ``v`` is a scalar
    prior variance of ``x0 - m``.  With ``D = sqrt(abar v + 1 - abar)`` the
    network sees

    * ``u = (x_t - sqrt(abar) m) / D``, a unit-variance input,
    * ``s = sqrt(1 - abar) / D * u``, the noise estimate under a Gaussian prior,
    * ``cond`` itself (conditioned models only).

    Hidden conv layers use a smooth activation; the sinusoidal timestep
    embedding goes through one linear layer and is added per channel after
    the first conv.  The prediction is

        eps = (1 - k) * D / sqrt(1 - abar) * u + k * s + w * net,
        w = abar v / (abar v + 1 - abar),

    with a learned scalar ``k`` (``prior_weight``, initially 0).  ``k = 0``
    means "the clean image is m", ``k = 1`` the Gaussian posterior mean.
    ``w`` is the weight the Gaussian posterior puts on ``x_t``: the residual
    can only add detail once the noise level drops below the prior spread,
    and in clean-image space neither the ``k`` error nor the residual is
    amplified at high noise.
    """

    kind = "conv_denoiser"

    def __init__(self, params, channels, depth, temb_dim, activation="silu",
                 conditioned=True, prior_mean=0.0, prior_var=1.0, kernel=3):
        if not 2 <= depth <= 6:
            raise ValueError("depth must be between 2 and 6 conv layers")
        self.params = params
        self.channels = int(channels)
        self.depth = int(depth)
        self.temb_dim = int(temb_dim)
        self.activation = activation
        self.conditioned = bool(conditioned)
        self.prior_mean = float(prior_mean)
        self.prior_var = float(prior_var)
        self.kernel = int(kernel)

    @classmethod
    def init(cls, rng, channels=16, depth=4, temb_dim=16, activation="silu",
             conditioned=True, prior_mean=0.0, prior_var=1.0, kernel=3):
        """Seeded uniform fan-in initialization; the output conv starts small."""
        c_in = 3 if conditioned else 2
        widths = [c_in] + [channels] * (depth - 1) + [1]
        params = {}
        for i in range(depth):
            fan_in = widths[i] * kernel * kernel
            gain = 0.1 if i == depth - 1 else 1.0
            params[f"w{i}"] = layers.uniform_fan_in(rng, (widths[i + 1], widths[i], kernel, kernel), fan_in, gain)
            params[f"b{i}"] = np.zeros(widths[i + 1])
        params["temb_w"] = layers.uniform_fan_in(rng, (channels, temb_dim), temb_dim)
        params["temb_b"] = np.zeros(channels)
        params["prior_weight"] = np.zeros(1)
        return cls(params, channels, depth, temb_dim, activation, conditioned,
                   prior_mean, prior_var, kernel)

    # -- forward / backward ------------------------------------------------

    def _prepare(self, x_t, t, sched, cond):
        x = np.asarray(x_t, dtype=np.float64)
        if self.conditioned:
            if cond is None:
                raise MissingCondition("missing condition: conditioned model called without cond")
            m = np.asarray(cond, dtype=np.float64)
            check_same_shape(x, m)
        else:
            m = self.prior_mean
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
            if self.conditioned:
                m = m[None]
        if x.ndim != 3:
            raise ShapeMismatch(f"expected (H, W) or (B, H, W) input, got {np.shape(x_t)}")
        B = x.shape[0]
        tb = np.broadcast_to(np.asarray(t, dtype=np.int64), (B,))
        a = sched.abar_array(tb)[:, None, None]
        denom = np.sqrt(a * self.prior_var + 1.0 - a)
        u_scale = 1.0 / denom
        skip_gain = np.sqrt(1.0 - a) / denom
        u = (x - np.sqrt(a) * m) * u_scale
        s = skip_gain * u
        raw_gain = denom / np.sqrt(np.maximum(1.0 - a, 1e-12))
        out_gain = a * self.prior_var * u_scale ** 2
        chans = [u, s] + ([m] if self.conditioned else [])
        gains = (u_scale, skip_gain, raw_gain, s, out_gain)
        return np.stack(chans, axis=1), tb, gains, squeeze

    def _forward(self, x_t, t, sched, cond):
        inputs, tb, gains, squeeze = self._prepare(x_t, t, sched, cond)
        p = self.params
        emb = layers.sinusoidal_embedding(tb, self.temb_dim) @ p["temb_w"].T + p["temb_b"]
        h = inputs
        pre, acts = [], [inputs]
        for i in range(self.depth):
            z = layers.conv2d(h, p[f"w{i}"], p[f"b{i}"])
            if i == 0:
                z = z + emb[:, :, None, None]
            if i < self.depth - 1:
                pre.append(z)
                h = layers.activation(self.activation, z)
                acts.append(h)
            else:
                h = z
        cache = _Cache(inputs, pre, acts, *gains)
        k = p["prior_weight"][0]
        u = inputs[:, 0]
        out = (1.0 - k) * cache.raw_gain * u + k * cache.s + cache.out_gain * h[:, 0]
        return (out[0] if squeeze else out), cache, tb, squeeze

    def _backward(self, cache, gout, tb, need_params):
        p = self.params
        grads = {}
        k = p["prior_weight"][0]
        u = cache.inputs[:, 0]
        g_s = k * gout
        g_u_direct = (1.0 - k) * cache.raw_gain * gout
        if need_params:
            grads["prior_weight"] = np.array([np.sum(gout * (cache.s - cache.raw_gain * u))])
        g = (cache.out_gain * gout)[:, None]
        for i in reversed(range(self.depth)):
            if i < self.depth - 1:
                g = layers.activation_backward(self.activation, cache.pre[i], g)
            if need_params and i == 0:
                g_emb = g.sum(axis=(2, 3))
                emb_in = layers.sinusoidal_embedding(tb, self.temb_dim)
                grads["temb_w"] = g_emb.T @ emb_in
                grads["temb_b"] = g_emb.sum(axis=0)
            g, dw, db = layers.conv2d_backward(g, cache.acts[i], p[f"w{i}"], need_params=need_params)
            if need_params:
                grads[f"w{i}"] = dw
                grads[f"b{i}"] = db
        g_u = g[:, 0] + g_u_direct
        g_s = g_s + g[:, 1]
        g_x = cache.u_scale * (g_u + cache.skip_gain * g_s)
        return g_x, grads

    # -- public contract -----------------------------------------------------

    def predict_eps(self, x_t, t, sched, cond=None):
        return self._forward(x_t, t, sched, cond)[0]

    def eps_vjp(self, x_t, t, cotangent, sched, cond=None):
        _, cache, tb, squeeze = self._forward(x_t, t, sched, cond)
        cot = np.asarray(cotangent, dtype=np.float64)
        check_same_shape(x_t, cot)
        g_x, _ = self._backward(cache, cot[None] if squeeze else cot, tb, need_params=False)
        return g_x[0] if squeeze else g_x

    def eps_and_vjp(self, x_t, t, sched, cond=None):
        """Forward once, return ``(eps, vjp_fn)`` reusing the cached activations."""
        eps, cache, tb, squeeze = self._forward(x_t, t, sched, cond)

        def vjp(cot):
            cot = np.asarray(cot, dtype=np.float64)
            g_x, _ = self._backward(cache, cot[None] if squeeze else cot, tb, need_params=False)
            return g_x[0] if squeeze else g_x

        return eps, vjp

    def loss_and_grads(self, x_t, t, eps, sched, cond=None, aux=None):
        """Pixel-mean noise MSE and its parameter gradients.

        ``aux`` optionally maps ``(pred_eps, t_array) -> (loss, d loss / d pred_eps)``
        for extra training objectives.
        """
        pred, cache, tb, squeeze = self._forward(x_t, t, sched, cond)
        if squeeze:
            pred, eps = pred[None], np.asarray(eps)[None]
        diff = pred - eps
        loss = float(np.mean(diff ** 2))
        gout = 2.0 * diff / diff.size
        if aux is not None:
            aux_loss, aux_grad = aux(pred, tb)
            loss += aux_loss
            gout = gout + aux_grad
        _, grads = self._backward(cache, gout, tb, need_params=True)
        return loss, grads

    # -- persistence ---------------------------------------------------------

    def arch(self):
        return {
            "channels": self.channels, "depth": self.depth, "temb_dim": self.temb_dim,
            "activation": self.activation, "conditioned": self.conditioned,
            "prior_mean": self.prior_mean, "prior_var": self.prior_var, "kernel": self.kernel,
        }

    def copy(self):
        return ConvDenoiser({k: v.copy() for k, v in self.params.items()}, **self.arch())

    def save(self, path):
        save_container(path, self.kind, {"arch": self.arch()}, self.params)

    @classmethod
    def load(cls, path):
        meta, arrays = load_container(path, cls.kind)
        return cls(arrays, **meta["arch"])


@dataclass
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 8
    lr: float = 0.05
    momentum: float = 0.9
    max_grad_norm: float = 1.0
    crop: int = 32
    seed: int = 0


def _sample_batch(rng, hr, cond, batch, crop):
    n, H, W = hr.shape
    idx = rng.integers(0, n, shape=batch)
    if crop and crop < min(H, W):
        ys = rng.integers(0, H - crop + 1, shape=batch)
        xs = rng.integers(0, W - crop + 1, shape=batch)
        x0 = np.stack([hr[i, y:y + crop, x:x + crop] for i, y, x in zip(idx, ys, xs)])
        c = None if cond is None else np.stack([cond[i, y:y + crop, x:x + crop] for i, y, x in zip(idx, ys, xs)])
        return x0, c, idx, ys, xs
    return hr[idx], (None if cond is None else cond[idx]), idx, None, None


def train_denoiser(model, hr, cond, sched, cfg, aux=None):
    """Momentum SGD on the simple loss with uniformly sampled steps.

    ``hr`` is ``(N, H, W)``; ``cond`` is ``(N, H, W)`` or None.  Returns a
    trained copy of ``model`` and the per-iteration loss trace.  ``aux``, if
    given, is called as ``aux(pred_eps, t, x_t, x0, batch_index, crop_origin)``
    and must return ``(loss, grad_wrt_pred_eps)``.
    """
    hr = np.asarray(hr, dtype=np.float64)
    if hr.ndim != 3 or hr.shape[0] == 0:
        raise ValueError("dataset must be a non-empty (N, H, W) stack")
    if cond is not None:
        cond = np.asarray(cond, dtype=np.float64)
        check_same_shape(hr, cond)
    model = model.copy()
    rng = Rng(cfg.seed)
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    trace = []
    for it in range(int(cfg.iterations)):
        x0, c, idx, ys, xs = _sample_batch(rng, hr, cond, cfg.batch_size, cfg.crop)
        t = rng.integers(1, sched.T + 1, shape=x0.shape[0])
        eps = rng.normal(x0.shape)
        xt = forward_diffuse(x0, t, eps, sched)
        aux_fn = None
        if aux is not None:
            def aux_fn(pred, tb, _xt=xt, _x0=x0, _idx=idx, _org=(ys, xs)):
                return aux(pred, tb, _xt, _x0, _idx, _org)
        loss, grads = model.loss_and_grads(xt, t, eps, sched, c, aux=aux_fn)
        if not np.isfinite(loss):
            raise Divergence(f"divergence: non-finite loss at iteration {it}")
        trace.append(loss)
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        clip = 1.0
        if cfg.max_grad_norm and norm > cfg.max_grad_norm:
            clip = cfg.max_grad_norm / norm
        for k, g in grads.items():
            velocity[k] = cfg.momentum * velocity[k] + clip * g
            model.params[k] = model.params[k] - cfg.lr * velocity[k]
        if it % 250 == 0:
            log.debug("iter %d loss %.5f", it, loss)
    return model, np.array(trace)


def evaluate_loss(model, hr, cond, sched, draws=256, seed=12345, chunk=32):
    """Simple loss averaged over a fixed set of ``(image, t, eps)`` draws.

    Per-iteration training losses are dominated by whichever small ``t``
    land in the minibatch; this gives a stable before/after comparison.
    """
    hr = np.asarray(hr, dtype=np.float64)
    rng = Rng(seed)
    idx = rng.integers(0, hr.shape[0], draws)
    t = rng.integers(1, sched.T + 1, draws)
    total = 0.0
    for s in range(0, draws, chunk):
        sl = slice(s, min(s + chunk, draws))
        x0 = hr[idx[sl]]
        eps = rng.normal(x0.shape)
        xt = forward_diffuse(x0, t[sl], eps, sched)
        c = None if cond is None else np.asarray(cond, dtype=np.float64)[idx[sl]]
        pred = model.predict_eps(xt, t[sl], sched, cond=c)
        total += float(np.sum((pred - eps) ** 2))
    return total / (draws * hr.shape[-1] * hr.shape[-2])
