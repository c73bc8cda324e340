import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from otdrqlim.config import derive_grid
from otdrqlim.estimation import (PhaseTracker, ReferenceSelectionError, circular_variance,
                                 estimate_phase, fade_mask, phase_difference, select_reference,
                                 temperature_from_phase, unwrap_slow_time, wrap_phase)
from otdrqlim.experiment import simulate_frames

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_estimate_phase_quadrants():
    assert estimate_phase(1 + 0j) == 0.0
    assert estimate_phase(1j) == pytest.approx(np.pi / 2)
    assert estimate_phase(-1 - 1j) == pytest.approx(-3 * np.pi / 4)
    assert estimate_phase(complex(-1, -0.0)) == pytest.approx(np.pi)  # -pi maps to +pi
    assert np.isnan(estimate_phase(0j))


@given(finite, finite, st.floats(1e-6, 1e6))
def test_phase_amplitude_invariant(re, im, c):
    assume(abs(complex(re, im)) > 1e-6)
    y = complex(re, im)
    assert estimate_phase(c * y) == pytest.approx(estimate_phase(y), abs=1e-12)


@given(st.floats(-100, 100))
def test_wrap_range(x):
    w = wrap_phase(x)
    assert -np.pi < w <= np.pi
    assert np.cos(w) == pytest.approx(np.cos(x), abs=1e-9)


def test_phase_difference():
    phases = np.array([[0.3, 0.3], [0.0, 1.5 * np.pi], [np.nan, 1.0]])
    d = phase_difference(phases, 0, 1)
    assert d[0] == 0.0
    assert d[1] == pytest.approx(-np.pi / 2)
    assert np.isnan(d[2])


@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3)), min_size=1, max_size=20))
def test_phase_difference_antisymmetric(pairs):
    phases = np.array(pairs)
    a, b = phase_difference(phases, 0, 1), phase_difference(phases, 1, 0)
    keep = np.abs(np.abs(a) - np.pi) > 1e-9
    np.testing.assert_allclose(a[keep], -b[keep], atol=1e-12)


def test_select_reference():
    rng = np.random.default_rng(0)
    phases = rng.normal(0, 0.5, (200, 300))
    phases[:, 100] = rng.normal(0, 1e-3, 200)
    cands = np.ones(300, bool)
    assert circular_variance(phases[:, 100]) < 1e-5
    assert select_reference(phases, np.ones(300), cands) == 100
    # excluded candidates never win, however quiet
    cands[100] = False
    assert select_reference(phases, np.ones(300), cands) != 100


def test_select_reference_tie_break():
    phases = np.tile(np.linspace(-1, 1, 10), (5, 1))  # every column constant in time
    amplitude = np.linspace(1, 2, 10)
    amplitude[3] = 5.0
    assert select_reference(phases, amplitude, np.ones(10, bool)) == 3
    with pytest.raises(ReferenceSelectionError, match="seed"):
        select_reference(phases, amplitude, np.zeros(10, bool))


def test_unwrap():
    r = unwrap_slow_time(np.full(10, 1.2))
    np.testing.assert_array_equal(r.values, 1.2)
    assert r.reliable
    ramp = 0.5 * np.arange(21)
    r = unwrap_slow_time(wrap_phase(ramp))
    assert r.values[-1] == pytest.approx(10.0)
    assert r.reliable
    alt = np.cumsum(np.tile([0.9 * np.pi, -0.9 * np.pi], 10))
    assert not unwrap_slow_time(wrap_phase(alt)).reliable


def test_unwrap_bridges_gaps():
    w = wrap_phase(0.5 * np.arange(8))
    w[3] = np.nan
    r = unwrap_slow_time(w)
    assert r.bridged[3] and r.bridged.sum() == 1
    assert r.values[3] == pytest.approx(1.5)
    assert r.values[-1] == pytest.approx(3.5)


def test_temperature_from_phase():
    np.testing.assert_array_equal(temperature_from_phase(np.full(5, 0.7), 87.6, 10.0), 0.0)
    dT = temperature_from_phase(np.array([0.2, 0.2 + 0.876]), 87.6, 10.0)
    assert dT[1] == pytest.approx(1e-3)
    np.testing.assert_array_equal(temperature_from_phase([0.0, 1.0], 2 * 87.6, 10.0),
                                  temperature_from_phase([0.0, 1.0], 87.6, 10.0) / 2)
    with pytest.raises(ValueError):
        temperature_from_phase([0.0, 1.0], 87.6, 0.0)


def test_fade_mask():
    a = np.ones(1000)
    a[10] = 0.05
    a[20] = 0.0
    m = fade_mask(a, 0.1)
    assert not m[10] and not m[20] and m.sum() == 998


def test_tracker_is_sklearn_compatible():
    t = PhaseTracker(monitor_distance=12.0)
    assert clone(t).get_params()["monitor_distance"] == 12.0
    with pytest.raises(NotFittedError):
        t.transform(np.ones((2, 3), complex))
    with pytest.raises(ValueError):
        t.fit(np.ones((2, 2, 2)))


def _noiseless_frames(cfg, frames=12, seed=0):
    grid = derive_grid(cfg)
    noisy, truth = simulate_frames(cfg, seed, 0.0, frames)
    return grid, truth


def test_tracker_recovers_injected_ramp(small_config):
    cfg = small_config
    grid, X = _noiseless_frames(cfg)
    tracker = PhaseTracker.from_config(cfg, grid, monitor_distance=cfg.heating_zone[1] + 25.0)
    dT = tracker.fit_transform(X)
    assert tracker.delta_L_ == pytest.approx(60.0)
    p = np.arange(len(X))
    np.testing.assert_allclose(dT[1:], cfg.heating_rate * p[1:], rtol=1e-9)
    slope = np.polyfit(p, dT, 1)[0]
    assert slope == pytest.approx(cfg.heating_rate, rel=1e-9)
    d = tracker.reference_index_ * grid.sample_spacing
    assert d < cfg.heating_zone[0] - tracker.guard
    assert tracker.valid_mask_[tracker.monitor_column_]


def test_tracker_phase_ramp_step(small_config):
    """A phase ramp of 0.01 rad per frame between the two points comes back exactly."""
    cfg = small_config
    dL = 20.0
    rate = 0.01 / (cfg.cf * dL)
    from conftest import small_source
    from otdrqlim.config import validate

    cfg = validate(small_source(heating_rate_k_per_frame=rate,
                                heating_zone_end_m=cfg.heating_zone[0] + dL,
                                monitor_distance_m=cfg.heating_zone[0] + dL + 25.0))
    grid, X = _noiseless_frames(cfg, frames=30, seed=2)
    track = PhaseTracker.from_config(cfg, grid).fit(X).track(X)
    np.testing.assert_allclose(track.delta_phi - track.delta_phi[0], 0.01 * np.arange(30),
                               rtol=1e-9, atol=1e-12)
    assert track.reliable and not track.bridged.any()
