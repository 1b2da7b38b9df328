import numpy as np
import pytest
from hypothesis import given, strategies as st

from irs_underlay.quantize import max_quantization_error, quantize_phases
from irs_underlay.sysmodel import ReflectVector


def q(theta, F, circular=True):
    return np.mod(quantize_phases(ReflectVector.from_phases(np.atleast_1d(theta)), F, circular).phases, 2 * np.pi)


def circ(a, b):
    d = np.abs(np.mod(a - b, 2 * np.pi))
    return np.minimum(d, 2 * np.pi - d)


def test_nearest_level_example():
    assert q(1.0, 4)[0] == pytest.approx(np.pi / 2)


def test_on_grid_unchanged():
    levels = 2 * np.pi * np.arange(8) / 8
    assert np.allclose(circ(q(levels, 8), levels), 0.0, atol=1e-12)


def test_wrap_around_goes_to_zero():
    assert circ(q(2 * np.pi - 0.01, 4)[0], 0.0) < 1e-12


def test_linear_distance_does_not_wrap():
    assert q(2 * np.pi - 0.01, 4, circular=False)[0] == pytest.approx(3 * np.pi / 2)


def test_midpoint_tie_takes_lower_level():
    assert q(np.pi / 4, 4)[0] == pytest.approx(0.0, abs=1e-12)
    assert q(3 * np.pi / 4, 4)[0] == pytest.approx(np.pi / 2)


def test_rejects_single_level():
    with pytest.raises(ValueError):
        quantize_phases(ReflectVector(np.ones(2)), 1)


@given(st.lists(st.floats(-20, 20), min_size=1, max_size=16), st.sampled_from([2, 3, 4, 8, 16, 64]))
def test_error_bounded_by_half_step(theta, F):
    theta = np.asarray(theta)
    out = q(theta, F)
    assert np.all(circ(out, theta) <= max_quantization_error(F) + 1e-12)
    # every output sits on the grid and quantizing again changes nothing
    idx = out * F / (2 * np.pi)
    assert np.allclose(idx, np.round(idx), atol=1e-9)
    assert np.allclose(circ(q(out, F), out), 0.0, atol=1e-12)


def test_deterministic(rng):
    ups = ReflectVector.random(10, rng)
    assert np.array_equal(quantize_phases(ups, 8).upsilon, quantize_phases(ups, 8).upsilon)
