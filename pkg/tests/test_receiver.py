import numpy as np
import pytest

from otdrqlim.fiber import ComplexTrace
from otdrqlim.optics import amplify_with_ase
from otdrqlim.receiver import (band_limit, detect, in_band_noise_power, lowpass_taps,
                               measure_snr, receiver_model)

FS = 625e6


@pytest.fixture
def rx(default_config):
    return receiver_model(default_config)


def test_taps(rx):
    h = rx.filter_taps
    assert len(h) == 127
    np.testing.assert_allclose(h, h[::-1])  # linear phase
    assert h.sum() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        lowpass_taps(128, 300e6, FS)


def test_noise_free_detection_is_linear(rx):
    rng = np.random.default_rng(0)
    x = rng.standard_normal(300) + 1j * rng.standard_normal(300)
    y = rng.standard_normal(300) + 1j * rng.standard_normal(300)
    d = lambda v: detect(ComplexTrace(v, FS), rx, noise_enabled=False).samples
    np.testing.assert_allclose(d(2.0 * x - 3.0 * y), 2.0 * d(x) - 3.0 * d(y), rtol=1e-14, atol=1e-14)
    np.testing.assert_array_equal(d(x), x * rx.responsivity)


def test_band_limit_basics(rx):
    h = rx.filter_taps
    np.testing.assert_array_equal(band_limit(np.zeros(1000, complex), h), 0)
    out = band_limit(np.full(1000, 2.5 - 1j), h)
    np.testing.assert_allclose(out[200:800], 2.5 - 1j, rtol=1e-6)
    rng = np.random.default_rng(1)
    white = rng.standard_normal(1_000_000)
    assert np.var(band_limit(white, h)) == pytest.approx(2 * 300e6 / FS, rel=0.02)
    # group delay removed: an impulse stays centred
    imp = np.zeros(501)
    imp[250] = 1.0
    assert np.argmax(band_limit(imp, h)) == 250


def test_in_band_noise_calibration(default_config, rx):
    from otdrqlim.optics import preamp_model

    ase = preamp_model(default_config)
    rng = np.random.default_rng(2)
    zero = ComplexTrace(np.zeros(244_836), FS)
    noisy = detect(amplify_with_ase(zero, ase, rng), rx, rng)
    out = band_limit(noisy.samples, rx.filter_taps)
    expected = in_band_noise_power(rx, ase.psd_per_pol)
    assert np.mean(np.abs(out) ** 2) == pytest.approx(expected, rel=0.02)
    # the same figure written as (h nu + ase psd) B, to within the filter's NEB
    assert expected == pytest.approx((rx.shot_psd_equiv + ase.psd_per_pol) * 300e6, rel=0.02)


def test_truth_and_noisy_paths_differ_by_filtered_noise(default_config, rx):
    from otdrqlim.optics import preamp_model

    ase = preamp_model(default_config)
    rng = np.random.default_rng(3)
    x = ComplexTrace(0.3 * np.exp(1j * np.linspace(0, 40, 244_836)), FS)
    truth = band_limit(detect(amplify_with_ase(x, ase, None, 0.0), rx, noise_enabled=False).samples,
                       rx.filter_taps)
    noisy = band_limit(detect(amplify_with_ase(x, ase, rng), rx, rng).samples, rx.filter_taps)
    assert np.mean(np.abs(noisy - truth) ** 2) == pytest.approx(
        in_band_noise_power(rx, ase.psd_per_pol), rel=0.02)


def test_filtered_noise_whiteness(rx):
    rng = np.random.default_rng(4)
    n = rng.standard_normal(1 << 18) + 1j * rng.standard_normal(1 << 18)
    y = band_limit(n, rx.filter_taps)
    c0 = np.vdot(y, y).real
    for lag in range(2, 30):
        assert abs(np.vdot(y[:-lag], y[lag:])) / c0 < 0.1


def test_measure_snr():
    s = np.array([10.0, 0.0, 1j])
    m = measure_snr(s, 1.0)
    np.testing.assert_array_equal(m.per_sample, [100.0, 0.0, 1.0])
    np.testing.assert_array_equal(measure_snr(s, 2.0).per_sample, m.per_sample / 2)
    with pytest.raises(ValueError):
        measure_snr(s, 0.0)


def test_snr_of_injected_tone():
    rng = np.random.default_rng(5)
    sigma2 = 3e-9
    n = np.sqrt(sigma2 / 2) * (rng.standard_normal(100_000) + 1j * rng.standard_normal(100_000))
    tone = np.full(100_000, np.sqrt(100 * sigma2))
    measured = np.mean(np.abs(tone) ** 2) / np.mean(np.abs(n) ** 2)
    assert measured == pytest.approx(100, rel=0.02)
    assert measure_snr(tone, sigma2).median == pytest.approx(100)


def test_tone_phase_std_at_snr_100(default_config, rx):
    from otdrqlim.experiment import run_bypass

    sigma, limit = run_bypass(default_config, 100.0, 200_000, seed=6)
    assert limit == pytest.approx(0.0707, abs=1e-4)
    assert sigma == pytest.approx(limit, rel=0.02)
