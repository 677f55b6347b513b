import numpy as np
import pytest

from irguide import layers
from irguide.verify import central_difference, rel_error


def loop_conv(x, w, b, stride):
    B, C, H, W = x.shape
    O, _, k, _ = w.shape
    r = k // 2
    Ho, Wo = -(-H // stride), -(-W // stride)
    out = np.zeros((B, O, Ho, Wo))
    pad = np.zeros((B, C, H + 2 * r, W + 2 * r))
    pad[:, :, r:r + H, r:r + W] = x
    for n in range(B):
        for o in range(O):
            for yo in range(Ho):
                for xo in range(Wo):
                    y, xx = yo * stride, xo * stride
                    out[n, o, yo, xo] = np.sum(pad[n, :, y:y + k, xx:xx + k] * w[o]) + b[o]
    return out


@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("k", [1, 3, 5])
def test_conv2d_matches_loops(rng, stride, k):
    x = rng.normal(size=(2, 3, 6, 8))
    w = rng.normal(size=(4, 3, k, k))
    b = rng.normal(size=4)
    np.testing.assert_allclose(layers.conv2d(x, w, b, stride), loop_conv(x, w, b, stride), atol=1e-12)


@pytest.mark.parametrize("stride", [1, 2])
def test_conv2d_backward_fd(rng, stride):
    x = rng.normal(size=(2, 2, 6, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    proj = rng.normal(size=layers.conv2d(x, w, b, stride).shape)
    dx, dw, db = layers.conv2d_backward(proj, x, w, stride)
    assert rel_error(dx, central_difference(lambda z: np.sum(proj * layers.conv2d(z, w, b, stride)), x)) < 1e-7
    assert rel_error(dw, central_difference(lambda z: np.sum(proj * layers.conv2d(x, z, b, stride)), w)) < 1e-7
    assert rel_error(db, central_difference(lambda z: np.sum(proj * layers.conv2d(x, w, z, stride)), b)) < 1e-7


@pytest.mark.parametrize("name", ["tanh", "silu", "identity"])
def test_activation_backward_fd(rng, name):
    x = rng.normal(size=(3, 5)) * 3
    g = rng.normal(size=(3, 5))
    fd = central_difference(lambda z: np.sum(g * layers.activation(name, z)), x)
    assert rel_error(layers.activation_backward(name, x, g), fd) < 1e-8


def test_silu_extreme_inputs_are_finite():
    x = np.array([-1e4, -50.0, 0.0, 50.0, 1e4])
    with np.errstate(all="raise"):
        y = layers.activation("silu", x)
    np.testing.assert_allclose(y, [0.0, -50 / (1 + np.exp(50)), 0.0, 50.0, 1e4], atol=1e-18)


def test_sinusoidal_embedding_shape_and_values():
    e = layers.sinusoidal_embedding(np.array([0, 10]), 8)
    assert e.shape == (2, 8)
    np.testing.assert_array_equal(e[0], [0, 0, 0, 0, 1, 1, 1, 1])
    assert abs(e[1, 0] - np.sin(10.0)) < 1e-15


def test_uniform_fan_in_bound():
    from irguide.grid import Rng
    w = layers.uniform_fan_in(Rng(0), (1000,), fan_in=6, gain=2.0)
    assert np.abs(w).max() <= 2.0
    assert np.abs(w).max() > 1.9
