"""Perceptual prior: feature-map MSE through a locked conv stack plus soft-mask MSE.

The feature extractor is a small fixed conv stack standing in for a
pretrained backbone; its weights come from a seed or from an external
container file.  The segmenter assigns every pixel a softmax membership
over ``k`` intensity classes, which makes the mask term differentiable.
"""

import numpy as np

from . import layers
from .errors import IncompatibleShape
from .files import load_container, save_container
from .grid import Rng, as_grid, check_same_shape


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def _to_batch(x):
    lead = x.shape[:-2]
    return x.reshape((-1, 1) + x.shape[-2:]), lead


class FeatureExtractor:
    """Locked conv stack; ``tap`` selects the layer whose activation is returned.

    ``tap = 0`` returns the input itself as a single channel, which makes
    the feature loss plain pixel MSE.
    """

    kind = "feature_extractor"

    def __init__(self, weights, biases=None, strides=None, activation="tanh", tap=None):
        self.weights = tuple(_frozen(w) for w in weights)
        self.biases = None if biases is None else tuple(_frozen(b) for b in biases)
        self.strides = tuple(strides) if strides is not None else (1,) * len(self.weights)
        self.activation = activation
        self.tap = len(self.weights) if tap is None else int(tap)
        if not 0 <= self.tap <= len(self.weights):
            raise ValueError("tap layer out of range")
        if len(self.strides) != len(self.weights):
            raise ValueError("one stride per layer required")
        c = 1
        for w in self.weights:
            if w.ndim != 4 or w.shape[1] != c:
                raise ValueError("layer weights do not chain")
            c = w.shape[0]

    def __setattr__(self, name, value):
        if hasattr(self, "tap"):
            raise AttributeError("FeatureExtractor is immutable")
        super().__setattr__(name, value)

    @classmethod
    def from_seed(cls, seed=0, channels=(8, 16, 16), kernel=3, strides=None,
                  activation="tanh", tap=None, bias=False):
        rng = Rng(seed)
        weights, biases, c_in = [], [], 1
        for c_out in channels:
            weights.append(layers.uniform_fan_in(rng, (c_out, c_in, kernel, kernel), c_in * kernel * kernel, 0.5))
            biases.append(0.1 * rng.normal(c_out) if bias else np.zeros(c_out))
            c_in = c_out
        return cls(weights, biases if bias else None, strides, activation, tap)

    @classmethod
    def identity(cls):
        return cls([], tap=0)

    def _check(self, x):
        f = int(np.prod(self.strides[:self.tap], dtype=np.int64))
        if x.shape[-1] % f or x.shape[-2] % f:
            raise IncompatibleShape(f"incompatible shape {x.shape[-2:]} for total stride {f}")

    def _run(self, xb):
        acts, pre = [xb], []
        h = xb
        for i in range(self.tap):
            b = None if self.biases is None else self.biases[i]
            z = layers.conv2d(h, self.weights[i], b, self.strides[i])
            pre.append(z)
            h = layers.activation(self.activation, z)
            acts.append(h)
        return acts, pre

    def __call__(self, x):
        return extract_features(x, self)

    def backward(self, x, g_feat):
        """Vector-Jacobian product of the tap activation with respect to ``x``."""
        xb, lead = _to_batch(np.asarray(x, dtype=np.float64))
        acts, pre = self._run(xb)
        g = g_feat.reshape((-1,) + g_feat.shape[-3:])
        for i in reversed(range(self.tap)):
            g = layers.activation_backward(self.activation, pre[i], g)
            g, _, _ = layers.conv2d_backward(g, acts[i], self.weights[i], self.strides[i], need_params=False)
        return g[:, 0].reshape(lead + g.shape[-2:])

    def save(self, path):
        arrays = {f"w{i}": w for i, w in enumerate(self.weights)}
        if self.biases is not None:
            arrays.update({f"b{i}": b for i, b in enumerate(self.biases)})
        meta = {"strides": list(self.strides), "activation": self.activation, "tap": self.tap,
                "layers": len(self.weights), "bias": self.biases is not None}
        save_container(path, self.kind, meta, arrays)

    @classmethod
    def load(cls, path):
        meta, arr = load_container(path, cls.kind)
        n = meta["layers"]
        biases = [arr[f"b{i}"] for i in range(n)] if meta["bias"] else None
        return cls([arr[f"w{i}"] for i in range(n)], biases, meta["strides"], meta["activation"], meta["tap"])


def extract_features(x, fe):
    """Tap-layer activation, shape ``(..., C, H', W')``."""
    x = as_grid(x)
    fe._check(x)
    xb, lead = _to_batch(x)
    acts, _ = fe._run(xb)
    out = acts[fe.tap]
    return out.reshape(lead + out.shape[1:])


class SoftSegmenter:
    """Softmax over negative squared distances to ``k`` intensity centers."""

    def __init__(self, k=4, centers=None, temperature=0.05):
        if centers is None:
            centers = (np.arange(k) + 0.5) / k
        centers = _frozen(centers)
        if centers.ndim != 1 or centers.size != k:
            raise ValueError("need exactly k centers")
        if k >= 2 and np.any(np.diff(centers) <= 0):
            raise ValueError("centers must be strictly increasing")
        if k < 1 or temperature <= 0:
            raise ValueError("k >= 1 and positive temperature required")
        self.k = int(k)
        self.centers = centers
        self.temperature = float(temperature)

    def __call__(self, x):
        return soft_segment(x, self)


def _segment(x, seg):
    # inputs outside [0, 1] are clamped; the gradient is zero there
    xc = np.clip(x, 0.0, 1.0)[..., None, :, :]
    c = seg.centers.reshape((-1, 1, 1))
    logits = -((xc - c) ** 2) / seg.temperature
    logits = logits - logits.max(axis=-3, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=-3, keepdims=True), xc


def soft_segment(x, seg):
    """Mask bundle ``(..., k, H, W)``; channels sum to one at every pixel."""
    return _segment(as_grid(x), seg)[0]


def _segment_backward(x, seg, g_mask):
    s, xc = _segment(x, seg)
    g_logit = s * (g_mask - np.sum(s * g_mask, axis=-3, keepdims=True))
    c = seg.centers.reshape((-1, 1, 1))
    g = np.sum(g_logit * (-2.0 * (xc - c) / seg.temperature), axis=-3)
    return g * ((x > 0.0) & (x < 1.0))


def perceptual_loss(hr, sr, fe, seg, feature_weight=1.0, mask_weight=1.0):
    """Feature MSE plus mask MSE (float, or array per image for batches)."""
    hr, sr = as_grid(hr, "hr"), as_grid(sr, "sr")
    check_same_shape(hr, sr)
    df = extract_features(hr, fe) - extract_features(sr, fe)
    ds = soft_segment(hr, seg) - soft_segment(sr, seg)
    out = feature_weight * np.mean(df * df, axis=(-3, -2, -1)) + mask_weight * np.mean(ds * ds, axis=(-3, -2, -1))
    return float(out) if out.ndim == 0 else out


def perceptual_loss_grad(hr, sr, fe, seg, feature_weight=1.0, mask_weight=1.0):
    """Gradient of :func:`perceptual_loss` with respect to ``sr``."""
    hr, sr = as_grid(hr, "hr"), as_grid(sr, "sr")
    check_same_shape(hr, sr)
    f_hr, f_sr = extract_features(hr, fe), extract_features(sr, fe)
    g_feat = -2.0 * feature_weight * (f_hr - f_sr) / np.prod(f_sr.shape[-3:])
    s_hr, s_sr = soft_segment(hr, seg), soft_segment(sr, seg)
    g_mask = -2.0 * mask_weight * (s_hr - s_sr) / np.prod(s_sr.shape[-3:])
    return fe.backward(sr, g_feat) + _segment_backward(sr, seg, g_mask)
