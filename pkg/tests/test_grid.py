import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from irguide import grid
from irguide.errors import NonRealInverse, ShapeMismatch
from irguide.grid import Rng


def naive_dft2(x):
    """Matrix-form DFT written from the definition."""
    H, W = x.shape
    fy = np.exp(-2j * np.pi * np.outer(np.arange(H), np.arange(H)) / H)
    fx = np.exp(-2j * np.pi * np.outer(np.arange(W), np.arange(W)) / W)
    return fy @ x @ fx.T


images = st.tuples(st.integers(1, 9), st.integers(1, 9)).flatmap(
    lambda s: arrays(np.float64, s, elements=st.floats(-10, 10)))


def test_constant_image_has_only_dc():
    F = grid.fft2(np.ones((2, 2)))
    assert F[0, 0] == 4
    F[0, 0] = 0
    assert np.all(F == 0)


def test_delta_transforms_to_constant():
    F = grid.fft2(np.array([[1.0, 0.0], [0.0, 0.0]]))
    np.testing.assert_array_equal(F, np.ones((2, 2)))


def test_round_trip_8x8(rng):
    x = rng.normal(size=(8, 8))
    assert np.abs(grid.ifft2(grid.fft2(x)) - x).max() < 1e-12


def test_ifft2_dc_only_and_zero():
    spec = np.zeros((3, 5), dtype=complex)
    spec[0, 0] = 15
    np.testing.assert_allclose(grid.ifft2(spec), np.ones((3, 5)), atol=1e-15)
    assert np.all(grid.ifft2(np.zeros((4, 4), dtype=complex)) == 0)


def test_ifft2_rejects_non_hermitian():
    spec = np.zeros((4, 4), dtype=complex)
    spec[0, 1] = 1.0
    with pytest.raises(NonRealInverse):
        grid.ifft2(spec)


@given(images)
def test_fft2_matches_definition(x):
    np.testing.assert_allclose(grid.fft2(x), naive_dft2(x), atol=1e-9 * (1 + np.abs(x).sum()))


@given(images)
def test_parseval(x):
    lhs = np.sum(x * x)
    rhs = np.sum(np.abs(grid.fft2(x)) ** 2) / x.size
    assert abs(lhs - rhs) <= 1e-9 * max(lhs, 1e-300) + 1e-300


def test_fftshift_positions():
    s = np.zeros((2, 2))
    s[0, 0] = 4
    assert grid.fftshift(s)[1, 1] == 4
    s3 = np.zeros((3, 3))
    s3[0, 0] = 1
    assert grid.fftshift(s3)[1, 1] == 1


@given(st.integers(1, 5), st.integers(1, 5))
def test_fftshift_twice_even_is_identity(h, w):
    x = np.arange(4 * h * w, dtype=float).reshape(2 * h, 2 * w)
    np.testing.assert_array_equal(grid.fftshift(grid.fftshift(x)), x)


@given(images)
def test_ifftshift_inverts_fftshift(x):
    np.testing.assert_array_equal(grid.ifftshift(grid.fftshift(x)), x)


def test_grid_ops():
    x = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert grid.l2_norm_sq(x, x) == 0
    assert grid.variance(np.full((3, 3), 2.5)) == 0
    assert grid.mean(x) == 0.5
    np.testing.assert_array_equal(grid.add(x, x), 2 * x)
    np.testing.assert_array_equal(grid.sub(x, x), 0 * x)
    np.testing.assert_array_equal(grid.scale(x, 3.0), 3 * x)
    np.testing.assert_array_equal(grid.hadamard(x, x), x)
    with pytest.raises(ShapeMismatch):
        grid.add(x, np.ones((3, 3)))


def test_as_grid_rejects_bad_input():
    with pytest.raises(ValueError, match="non-finite"):
        grid.as_grid(np.array([[np.nan, 0.0]]))
    with pytest.raises(ShapeMismatch):
        grid.as_grid(np.ones(3))


def test_rng_reproducible_and_split():
    a, b = Rng(7), Rng(7)
    np.testing.assert_array_equal(a.normal((4, 4)), b.normal((4, 4)))
    c1, c2 = Rng(7).split(2)
    d1, _ = Rng(7).split(2)
    x1 = c1.normal(100)
    assert not np.array_equal(x1, c2.normal(100))
    np.testing.assert_array_equal(x1, d1.normal(100))
    u = Rng(3).uniform((1000,), -2, 5)
    assert u.min() >= -2 and u.max() < 5
