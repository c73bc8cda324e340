import numpy as np
import pytest

from otdrqlim.config import derive_grid
from otdrqlim.fiber import ComplexTrace
from otdrqlim.optics import (AseModel, PulseShape, amplify_with_ase, ase_psd, photon_energy,
                             preamp_model, shape_pulse)
from otdrqlim.receiver import band_limit, lowpass_taps

FS = 625e6
K = 244_836


def test_pulse(default_config, default_grid):
    p = shape_pulse(default_config, default_grid)
    assert p.peak_field == pytest.approx(0.4467, abs=1e-4)
    assert p.duration * FS == pytest.approx(62.5)
    with pytest.raises(ValueError):
        PulseShape(0.0, 1.0)


def test_ase_numbers():
    assert photon_energy(1550e-9) == pytest.approx(1.282e-19, rel=1e-3)
    m = ase_psd(22.0, 3.0, 1550e-9)
    assert m.gain == pytest.approx(158.49, abs=0.01)
    assert m.n_sp == pytest.approx(1.0040, abs=1e-4)
    assert m.psd_per_pol == pytest.approx(2.027e-17, rel=1e-3)
    p_ase = m.psd_per_pol * 300e6
    assert p_ase == pytest.approx(6.08e-9, rel=2e-3)
    assert 10 * np.log10(p_ase / 1e-3) == pytest.approx(-52.2, abs=0.05)


def test_ase_rejects_sub_quantum_noise_figure():
    with pytest.raises(ValueError):
        ase_psd(22.0, 2.0, 1550e-9)
    with pytest.raises(ValueError):
        ase_psd(0.0, 3.0, 1550e-9)


def test_transparent_limit():
    # at fixed n_sp (here the ideal n_sp = 1) the psd vanishes as G -> 1
    for gain_db in (1e-2, 1e-4, 1e-6):
        g = 10 ** (gain_db / 10)
        nf_db = 10 * np.log10(2 * (g - 1) / g)
        m = ase_psd(gain_db, nf_db, 1550e-9)
        assert m.n_sp == pytest.approx(1.0)
        assert m.psd_per_pol == pytest.approx(photon_energy(1550e-9) * (g - 1), rel=1e-9)
    rng = np.random.default_rng(0)
    trace = ComplexTrace(rng.standard_normal(64) + 1j, FS)
    out = amplify_with_ase(trace, AseModel.transparent(), rng)
    np.testing.assert_array_equal(out.samples, trace.samples)


def test_noise_free_gain_is_exact():
    model = ase_psd(22.0, 3.0, 1550e-9)
    x = ComplexTrace(np.exp(1j * np.linspace(0, 3, 50)), FS)
    out = amplify_with_ase(x, model, None, noise_scale=0.0)
    np.testing.assert_allclose(np.abs(out.samples) ** 2, model.gain * np.abs(x.samples) ** 2, rtol=1e-14)
    with pytest.raises(ValueError):
        amplify_with_ase(x, model, None)


def test_in_band_ase_power():
    model = ase_psd(22.0, 3.0, 1550e-9)
    out = amplify_with_ase(ComplexTrace(np.zeros(K), FS), model, np.random.default_rng(1))
    filtered = band_limit(out.samples, lowpass_taps(127, 300e6, FS))
    measured = np.mean(np.abs(filtered) ** 2) / model.gain
    assert measured == pytest.approx(model.psd_per_pol * 300e6 / model.gain, rel=0.02)


def test_ase_is_circular_and_reproducible():
    model = ase_psd(22.0, 3.0, 1550e-9)
    zero = ComplexTrace(np.zeros(K), FS)
    n = amplify_with_ase(zero, model, np.random.default_rng(2)).samples
    sigma = np.sqrt(np.mean(np.abs(n) ** 2))
    assert abs(n.mean()) < 4 * sigma / np.sqrt(K)
    assert np.var(n.real) == pytest.approx(np.var(n.imag), rel=0.03)
    again = amplify_with_ase(zero, model, np.random.default_rng(2)).samples
    np.testing.assert_array_equal(n, again)


def test_frames_independent():
    model = ase_psd(22.0, 3.0, 1550e-9)
    n = amplify_with_ase(ComplexTrace(np.zeros((2, K)), FS), model, np.random.default_rng(3)).samples
    rho = abs(np.vdot(n[0], n[1])) / np.sqrt(np.vdot(n[0], n[0]).real * np.vdot(n[1], n[1]).real)
    assert rho < 4 / np.sqrt(K)


def test_preamp_from_config(default_config):
    assert preamp_model(default_config).psd_per_pol == pytest.approx(2.027e-17, rel=1e-3)
    assert derive_grid(default_config).total_fast_samples == K
