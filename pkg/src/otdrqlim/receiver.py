"""Shot-noise-limited coherent receiver: detection, band limit, SNR."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import signal

from .config import ValidatedConfig
from .fiber import ComplexTrace
from .optics import white_complex_noise

logger = logging.getLogger(__name__)


def lowpass_taps(n_taps: int, bandwidth: float, sample_rate: float) -> np.ndarray:
    """Linear-phase windowed-sinc low-pass, unity DC gain, edge at ``bandwidth``."""
    if n_taps % 2 == 0:
        raise ValueError("an odd tap count keeps the group delay an integer")
    return signal.firwin(n_taps, bandwidth, fs=sample_rate)


@dataclass(frozen=True)
class ReceiverModel:
    lo_power: float
    bandwidth: float
    sample_rate: float
    shot_psd_equiv: float  # h*nu, input-referred
    filter_taps: np.ndarray
    thermal_psd: float = 0.0
    responsivity: float = 1.0

    @property
    def noise_gain(self) -> float:
        """Output variance of the band-limit filter per unit white input variance."""
        return float(np.sum(np.abs(self.filter_taps) ** 2))

    def scaled(self, noise_scale: float) -> "ReceiverModel":
        return replace(self, shot_psd_equiv=self.shot_psd_equiv * noise_scale**2,
                       thermal_psd=self.thermal_psd * noise_scale**2)


def receiver_model(config: ValidatedConfig) -> ReceiverModel:
    if config.bandwidth >= config.adc_rate / 2 * 1.05:
        logger.warning("receiver bandwidth %.3g Hz exceeds the ADC Nyquist band", config.bandwidth)
    return ReceiverModel(
        lo_power=config.lo_power,
        bandwidth=config.bandwidth,
        sample_rate=config.adc_rate,
        shot_psd_equiv=config.photon_energy,
        filter_taps=lowpass_taps(config.filter_taps_n, config.bandwidth, config.adc_rate),
        thermal_psd=config.thermal_psd,
    )


def check_lo_dominance(model: ReceiverModel, signal_power: float, margin_db: float = 20.0) -> bool:
    ratio_db = 10 * math.log10(model.lo_power / signal_power) if signal_power > 0 else math.inf
    if ratio_db < margin_db:
        logger.warning("LO only %.1f dB above the signal; strong-LO assumption is weak", ratio_db)
        return False
    return True


def detect(field: ComplexTrace, model: ReceiverModel, rng: np.random.Generator | None = None,
           noise_enabled: bool = True) -> ComplexTrace:
    """Ideal balanced IQ detection, y = i + jq, with unit detection gain.

    Shot (and optional thermal) noise is added as white circular complex
    Gaussian noise with input-referred PSD h*nu; the band limit is applied
    separately by :func:`band_limit`.
    """
    out = field.samples * model.responsivity
    variance = (model.shot_psd_equiv + model.thermal_psd) * model.sample_rate / 2
    if noise_enabled and variance > 0:
        if rng is None:
            raise ValueError("an RNG is required when receiver noise is enabled")
        out = out + white_complex_noise(rng, out.shape, variance)
    return field.with_samples(out)


def band_limit(trace, taps: np.ndarray):
    """FIR band limit along the last axis, group delay removed.

    Accepts a :class:`ComplexTrace` or an array (1-D trace or frames x K).
    """
    if isinstance(trace, ComplexTrace):
        return trace.with_samples(band_limit(trace.samples, taps))
    x = np.asarray(trace)
    if x.shape[-1] == 0:
        return x.copy()
    h = np.asarray(taps).reshape((1,) * (x.ndim - 1) + (-1,))
    return signal.oaconvolve(x, h, mode="same", axes=-1)


def in_band_noise_power(model: ReceiverModel, ase_psd: float = 0.0, noise_scale: float = 1.0) -> float:
    """Total complex noise variance at the sampler (ASE + shot + thermal)."""
    psd = ase_psd + model.shot_psd_equiv + model.thermal_psd
    return psd * noise_scale**2 * model.sample_rate / 2 * model.noise_gain


@dataclass(frozen=True)
class SnrMeasurement:
    per_sample: np.ndarray
    median: float


def measure_snr(noiseless, noise_power: float) -> SnrMeasurement:
    """Per-sample SNR |s_k|^2 / sigma_n^2 of the noiseless band-limited trace."""
    if not noise_power > 0:
        raise ValueError("SNR is undefined for zero noise power")
    s = noiseless.samples if isinstance(noiseless, ComplexTrace) else np.asarray(noiseless)
    snr = np.abs(s) ** 2 / noise_power
    return SnrMeasurement(snr, float(np.median(snr)) if snr.size else math.nan)
