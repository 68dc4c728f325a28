import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lact import tensor as T
from lact.filtering import FilterSpec, apply_filter, apply_response, filter_op, filter_response, frequencies, response
from lact.radon import Geometry, Sinogram


@pytest.fixture
def rng():
    return np.random.default_rng(3)


def test_frequency_grid_wraps_to_minus_pi():
    w = frequencies(8)
    assert w[0] == 0.0
    assert w.min() == -np.pi
    assert w.max() < np.pi


@pytest.mark.parametrize("alpha", [0.0, 0.5, 5.0, 6.0, 8.0])
def test_zero_frequency_is_annihilated(alpha):
    assert response(alpha, 0.0) == 0.0


def test_reference_value():
    # |2/5 sin(pi/2)| * (sin(pi/2) / (pi/2))^2 = 0.4 (2/pi)^2
    assert response(5.0, np.pi / 5) == pytest.approx(0.4 * (2 / np.pi) ** 2, abs=1e-12)
    assert response(5.0, np.pi / 5) == pytest.approx(0.16211, abs=1e-4)


def test_alpha_zero_is_ramp_bin_exact():
    w = frequencies(64)
    np.testing.assert_array_equal(filter_response(FilterSpec(0.0, 64)), np.abs(w))


def test_small_alpha_approaches_ramp():
    w = frequencies(64)
    np.testing.assert_allclose(response(1e-4, w), np.abs(w), atol=1e-6)


def test_response_against_direct_formula():
    w = frequencies(33)[1:]
    for alpha in (0.7, 3.0, 6.0):
        x = alpha * w / 2
        direct = np.abs(2 / alpha * np.sin(x)) * (np.sin(x) / x) ** 2
        np.testing.assert_allclose(response(alpha, w), direct, rtol=1e-13, atol=1e-15)


def test_negative_alpha_rejected():
    with pytest.raises(ValueError):
        FilterSpec(-1.0, 16)


def test_constant_row_filters_to_zero():
    out = apply_filter(np.full((3, 16), 2.5), FilterSpec(6.0, 16))
    np.testing.assert_allclose(out, 0.0, atol=1e-13)


def test_unit_multiplier_is_identity(rng):
    x = rng.normal(size=(4, 20))
    np.testing.assert_allclose(apply_response(x, np.ones(20)), x, rtol=1e-13, atol=1e-13)


def test_sinogram_wrapper_keeps_geometry(rng):
    g = Geometry(16, (0.0, 10.0))
    s = Sinogram(rng.normal(size=(2, 16)), g)
    out = apply_filter(s, FilterSpec(2.0, 16))
    assert out.geometry is g
    np.testing.assert_array_equal(out.values, apply_filter(s.values, FilterSpec(2.0, 16)))


@pytest.mark.parametrize("alpha", [0.0, 2.5, 6.0])
def test_self_adjoint(alpha, rng):
    spec = FilterSpec(alpha, 31)
    for _ in range(10):
        x, y = rng.normal(size=(2, 5, 31))
        lhs = np.vdot(apply_filter(x, spec), y)
        rhs = np.vdot(x, apply_filter(y, spec))
        assert abs(lhs - rhs) <= 1e-9 * max(abs(lhs), abs(rhs))


def test_composition_is_squared_response(rng):
    spec = FilterSpec(4.0, 32)
    x = rng.normal(size=(6, 32))
    twice = apply_filter(apply_filter(x, spec), spec)
    squared = apply_response(x, filter_response(spec) ** 2)
    assert np.linalg.norm(twice - squared) <= 1e-9 * np.linalg.norm(squared)


def test_monotone_smoothing(rng):
    x = rng.normal(size=(8, 64))
    w = np.abs(frequencies(64))
    energies = []
    for alpha in range(7):
        spectrum = np.fft.fft(apply_filter(x, FilterSpec(float(alpha), 64)), axis=-1)
        energies.append(float(np.sum(np.abs(spectrum[:, w > np.pi / 2]) ** 2)))
    assert all(b <= a for a, b in zip(energies, energies[1:]))


def test_filter_op_backward_is_filter(rng):
    spec = FilterSpec(3.0, 16)
    x = T.Tensor(rng.normal(size=(4, 16)), requires_grad=True)
    g = rng.normal(size=(4, 16))
    T.reduce_sum(filter_op(spec)(x) * T.Tensor(g)).backward()
    np.testing.assert_allclose(x.grad, apply_filter(g, spec), atol=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 8.0), st.floats(-math.pi, math.pi))
def test_response_bounded_by_ramp(alpha, omega):
    # |sin(u)| <= |u| and sinc^2 <= 1, so the filter never exceeds the ramp
    assert 0.0 <= response(alpha, omega) <= abs(omega) + 1e-15
