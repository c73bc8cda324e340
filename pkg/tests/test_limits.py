import numpy as np
import pytest
from hypothesis import given, strategies as st

from otdrqlim.limits import averaged_limit, limit_curve, phase_limit, temperature_limit

positive = st.floats(min_value=1e-6, max_value=1e9, allow_nan=False)


def test_phase_limit_points():
    assert phase_limit(50) == pytest.approx(0.1)
    assert phase_limit(0.5) == pytest.approx(1.0)
    assert phase_limit(1e12) < 1e-6
    with pytest.raises(ValueError):
        phase_limit(0.0)
    with pytest.raises(ValueError):
        phase_limit([-1.0, 2.0])


def test_temperature_limit_points():
    assert temperature_limit(0.1, 87.6, 10.0) == pytest.approx(1.614e-4, rel=1e-3)
    assert temperature_limit(0.1, 87.6, 20.0) == temperature_limit(0.1, 87.6, 10.0) / 2
    assert temperature_limit(0.0, 87.6, 10.0) == 0.0
    with pytest.raises(ValueError):
        temperature_limit(0.1, 87.6, 0.0)
    with pytest.raises(ValueError):
        temperature_limit(0.1, -1.0, 1.0)


def test_averaged_limit():
    assert averaged_limit(1.614e-4, 1) == pytest.approx(1.614e-4)
    assert averaged_limit(2.0, 100) == pytest.approx(0.2)
    assert averaged_limit(1.614e-4, 4) == pytest.approx(8.07e-5)
    with pytest.raises(ValueError):
        averaged_limit(1.0, 0)


def test_limit_curves():
    c = limit_curve("phase_vs_snr", [10, 100, 1000])
    np.testing.assert_allclose(c.sigma, [0.2236, 0.0707, 0.0224], atol=1e-4)
    c = limit_curve("temp_vs_length", [1, 10, 50], cf=87.6, sigma_phi=0.1)
    np.testing.assert_allclose(c.sigma, [1.614e-3, 1.614e-4, 3.23e-5], rtol=2e-3)
    slope = np.polyfit(np.log(c.abscissa), np.log(c.sigma), 1)[0]
    assert slope == pytest.approx(-1.0, abs=1e-12)
    with pytest.raises(ValueError):
        limit_curve("phase_vs_snr", [])
    with pytest.raises(ValueError):
        limit_curve("nope", [1.0])


@given(positive)
def test_quadrupled_snr_halves_phase(snr):
    assert phase_limit(4 * snr) == pytest.approx(phase_limit(snr) / 2, rel=1e-15)


@given(positive, st.floats(0.1, 100), st.floats(0.1, 1000))
def test_temperature_homogeneity(sigma, dL, k):
    base = temperature_limit(sigma, 87.6, dL)
    assert temperature_limit(sigma, 87.6, k * dL) == pytest.approx(base / k, rel=1e-12)
    assert temperature_limit(k * sigma, 87.6, dL) == pytest.approx(base * k, rel=1e-12)


def test_composition():
    snr = np.logspace(0, 5, 30)
    c = limit_curve("temp_vs_snr", snr, cf=87.6, delta_L=10.0)
    np.testing.assert_array_equal(c.sigma, temperature_limit(phase_limit(snr), 87.6, 10.0))
    f = limit_curve("temp_vs_frames", [1, 100], cf=87.6, delta_L=10.0, snr=50.0)
    assert f.sigma[1] == pytest.approx(f.sigma[0] / 10)
