"""Launch pulse and optical amplification with ASE."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .config import PLANCK_CONSTANT, SPEED_OF_LIGHT, DerivedGrid, ValidatedConfig, db_to_linear
from .fiber import ComplexTrace


@dataclass(frozen=True)
class PulseShape:
    duration: float
    peak_field: float  # sqrt(W)

    def __post_init__(self):
        if self.duration <= 0 or self.peak_field <= 0:
            raise ValueError("pulse duration and peak field must be > 0")


def shape_pulse(config: ValidatedConfig, grid: DerivedGrid | None = None) -> PulseShape:
    # the fibre-input peak power is given directly, so the booster gain is already in it
    return PulseShape(config.pulse_duration, math.sqrt(config.launch_peak_power))


@dataclass(frozen=True)
class AseModel:
    gain: float
    noise_figure: float
    photon_energy: float
    psd_per_pol: float

    @property
    def n_sp(self) -> float:
        return self.noise_figure * self.gain / (2 * (self.gain - 1)) if self.gain > 1 else math.inf

    @classmethod
    def transparent(cls, photon_energy: float = 0.0) -> "AseModel":
        return cls(1.0, 1.0, photon_energy, 0.0)

    def scaled(self, noise_scale: float) -> "AseModel":
        """Same gain, noise field amplitude multiplied by ``noise_scale``."""
        return replace(self, psd_per_pol=self.psd_per_pol * noise_scale**2)


def photon_energy(wavelength: float) -> float:
    return PLANCK_CONSTANT * SPEED_OF_LIGHT / wavelength


def ase_psd(gain_db: float, nf_db: float, wavelength: float) -> AseModel:
    """ASE power spectral density in one polarisation, W/Hz."""
    if gain_db <= 0:
        raise ValueError("amplifier gain must be > 0 dB")
    g = float(db_to_linear(gain_db))
    f = float(db_to_linear(nf_db))
    if f < 2 * (g - 1) / g * (1 - 1e-12):
        raise ValueError(f"noise figure {nf_db} dB is below the quantum limit for {gain_db} dB gain")
    hnu = photon_energy(wavelength)
    n_sp = f * g / (2 * (g - 1))
    return AseModel(g, f, hnu, n_sp * hnu * (g - 1))


def preamp_model(config: ValidatedConfig) -> AseModel:
    s = config.source
    return ase_psd(s.preamp_gain_db, s.preamp_nf_db, config.wavelength)


def white_complex_noise(rng: np.random.Generator, shape, variance: float) -> np.ndarray:
    """Circular complex Gaussian samples with E|n|^2 = ``variance``."""
    noise = rng.standard_normal((2,) + tuple(np.atleast_1d(shape)))
    return np.sqrt(variance / 2) * (noise[0] + 1j * noise[1])


def amplify_with_ase(trace: ComplexTrace, model: AseModel, rng: np.random.Generator | None = None,
                     noise_scale: float = 1.0) -> ComplexTrace:
    """Scale the field by sqrt(G) and add co-polarised white ASE.

    The per-sample complex variance is ``psd * F_s / 2``, so that after the
    receiver's two-sided 2B band limit the in-band ASE power is ``psd * B``.
    """
    out = trace.samples * math.sqrt(model.gain)
    variance = model.psd_per_pol * noise_scale**2 * trace.sample_rate / 2
    if variance > 0:
        if rng is None:
            raise ValueError("an RNG is required when ASE noise is enabled")
        out = out + white_complex_noise(rng, out.shape, variance)
    return trace.with_samples(out)
