import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from edgestereo import ops
from edgestereo.autodiff import backward, parameter
from edgestereo.stereo_ops import (compose_disparity, correlation1d, error_map,
                                   spatial_gradients, warp_right_to_left)


def row(values):
    return np.asarray(values, dtype=np.float64).reshape(1, 1, 1, -1)


def test_correlation_worked_example():
    f = row([1, 2, 3, 4])
    out = correlation1d(f, f, 1).value[0, :, 0]
    assert out[0].tolist() == [1, 4, 9, 16]
    assert out[1].tolist() == [0, 2, 6, 12]


def test_correlation_with_zero_right_is_zero(rng):
    assert not correlation1d(rng.normal(size=(1, 3, 2, 5)), np.zeros((1, 3, 2, 5)), 3).value.any()


def test_correlation_normalises_by_channels():
    out = correlation1d(np.ones((1, 2, 1, 4)), np.ones((1, 2, 1, 4)), 2).value[0, :, 0]
    for d in range(3):
        assert np.all(out[d, d:] == 1.0)
        assert np.all(out[d, :d] == 0.0)


@given(st.integers(1, 3), st.integers(1, 3), st.integers(2, 7), st.data())
def test_correlation_matches_naive_loops(c, h, w, data):
    seed = data.draw(st.integers(0, 10_000))
    d = data.draw(st.integers(0, w - 1))
    rng = np.random.default_rng(seed)
    fl, fr = rng.normal(size=(2, c, h, w)), rng.normal(size=(2, c, h, w))
    out = correlation1d(fl, fr, d).value
    assert out.shape[1] == d + 1
    assert np.allclose(out, oracles.correlation1d(fl, fr, d), atol=1e-12)


@given(st.integers(0, 10_000))
def test_correlation_self_channel_zero_is_mean_square(seed):
    f = np.random.default_rng(seed).normal(size=(1, 4, 3, 5))
    assert np.allclose(correlation1d(f, f, 2).value[:, 0], (f ** 2).mean(axis=1))


def test_correlation_rejects_large_displacement():
    with pytest.raises(ValueError):
        correlation1d(np.ones((1, 1, 1, 4)), np.ones((1, 1, 1, 4)), 4)


def test_warp_zero_disparity_is_identity(rng):
    r = rng.normal(size=(2, 3, 4, 5))
    assert np.array_equal(warp_right_to_left(r, np.zeros((2, 1, 4, 5))).value, r)


def test_warp_integer_shift_with_border_clamp():
    out = warp_right_to_left(row([0, 10, 20, 30]), np.ones((1, 1, 1, 4))).value
    assert out.ravel().tolist() == [0, 0, 10, 20]


def test_warp_half_pixel():
    out = warp_right_to_left(row([0, 10, 20, 30]), np.full((1, 1, 1, 4), 0.5)).value
    assert out.ravel().tolist() == [0, 5, 15, 25]


@given(st.integers(0, 10_000))
def test_warp_matches_naive_sampling(seed):
    rng = np.random.default_rng(seed)
    r = rng.normal(size=(2, 2, 3, 6))
    d = rng.uniform(-1, 8, size=(2, 1, 3, 6))
    assert np.allclose(warp_right_to_left(r, d).value, oracles.warp(r, d), atol=1e-12)


@given(st.integers(0, 5), st.integers(0, 10_000))
def test_warp_integer_disparity_is_exact_shift(d, seed):
    r = np.random.default_rng(seed).normal(size=(1, 1, 2, 8))
    out = warp_right_to_left(r, np.full((1, 1, 2, 8), float(d))).value
    idx = np.clip(np.arange(8) - d, 0, 7)
    assert np.array_equal(out, r[..., idx])


def test_warp_shape_mismatch():
    with pytest.raises(ValueError):
        warp_right_to_left(np.ones((1, 3, 4, 4)), np.ones((1, 1, 4, 5)))


def test_error_map_examples(rng):
    a = rng.normal(size=(1, 3, 2, 2))
    assert not error_map(a, a).value.any()
    assert error_map(row([1, 2]), row([3, 0])).value.ravel().tolist() == [2, 2]
    b = rng.normal(size=a.shape)
    assert np.array_equal(error_map(a, b).value, error_map(b, a).value)


def test_compose_constant_upsample():
    out = compose_disparity(np.full((1, 1, 1, 1), 2.0), np.zeros((1, 1, 2, 2))).value
    assert np.all(out == 4.0)


def test_compose_zero_residual_is_doubled_upsample(rng):
    c = rng.uniform(0, 3, size=(1, 1, 3, 4))
    out = compose_disparity(c, np.zeros((1, 1, 6, 8))).value
    assert np.allclose(out, 2 * ops.bilinear_resize(c, 6, 8).value)


def test_compose_zero_coarse_clamps_residual(rng):
    r = rng.normal(size=(1, 1, 4, 4))
    out = compose_disparity(np.zeros((1, 1, 2, 2)), r).value
    assert np.array_equal(out, np.maximum(r, 0))


@given(st.integers(2, 6), st.floats(0, 10))
def test_compose_telescopes(S, v):
    d = np.full((1, 1, 1, 2), v)
    for _ in range(S - 1):
        h, w = d.shape[-2:]
        d = compose_disparity(d, np.zeros((1, 1, 2 * h, 2 * w))).value
    assert d.shape[-2:] == (2 ** (S - 1), 2 ** S)
    assert np.allclose(d, 2 ** (S - 1) * v)


def test_compose_extent_mismatch():
    with pytest.raises(ValueError):
        compose_disparity(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 3, 4)))


def test_spatial_gradients_examples():
    gx, gy = spatial_gradients(np.full((1, 1, 3, 3), 7.0))
    assert not gx.value.any() and not gy.value.any()
    gx, _ = spatial_gradients(row([0, 1, 3]))
    assert gx.value.ravel().tolist() == [1, 2, 0]
    ramp = np.arange(4.0).reshape(1, 1, 4, 1) * np.ones((1, 1, 1, 3))
    _, gy = spatial_gradients(ramp)
    assert np.all(gy.value[..., :-1, :] == 1) and np.all(gy.value[..., -1, :] == 0)


def test_warp_disparity_gradient_zero_where_clamped():
    d = parameter(np.full((1, 1, 1, 4), 5.5, dtype=np.float64))
    backward(ops.reduce_sum(warp_right_to_left(row([0, 10, 20, 30]), d)))
    assert not d.grad.any()
