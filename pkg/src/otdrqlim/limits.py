"""Analytic quantum-limit reference curves."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("phase_vs_snr", "temp_vs_length", "temp_vs_snr", "temp_vs_frames")


def phase_limit(snr):
    """Phase uncertainty sqrt(1 / (2 SNR)) of shot-noise-limited coherent detection."""
    snr = np.asarray(snr, dtype=float)
    if np.any(snr <= 0):
        raise ValueError("SNR must be > 0")
    return np.sqrt(1.0 / (2.0 * snr))


def temperature_limit(sigma_phi, cf, delta_L):
    """Frame-to-frame temperature-change uncertainty sqrt(2) sigma_phi / (Cf dL)."""
    cf = np.asarray(cf, dtype=float)
    delta_L = np.asarray(delta_L, dtype=float)
    if np.any(cf <= 0) or np.any(delta_L <= 0):
        raise ValueError("Cf and delta_L must be > 0")
    return np.sqrt(2.0) * np.asarray(sigma_phi, dtype=float) / (cf * delta_L)


def averaged_limit(sigma, frames):
    frames = np.asarray(frames)
    if np.any(frames < 1):
        raise ValueError("frame count must be >= 1")
    return np.asarray(sigma, dtype=float) / np.sqrt(frames)


@dataclass(frozen=True)
class LimitCurve:
    kind: str
    abscissa: np.ndarray
    sigma: np.ndarray


def limit_curve(kind: str, abscissa, *, cf: float | None = None, delta_L: float | None = None,
                sigma_phi: float | None = None, snr: float | None = None) -> LimitCurve:
    """Vectorised reference curve.

    ``phase_vs_snr``: abscissa is linear SNR.
    ``temp_vs_snr``: abscissa is linear SNR, needs ``cf`` and ``delta_L``.
    ``temp_vs_length``: abscissa is dL in metres, needs ``cf`` and ``sigma_phi`` (or ``snr``).
    ``temp_vs_frames``: abscissa is frame count, needs ``cf``, ``delta_L`` and ``sigma_phi`` (or ``snr``).
    """
    x = np.asarray(abscissa, dtype=float)
    if x.size == 0:
        raise ValueError("empty sweep")
    if kind not in KINDS:
        raise ValueError(f"unknown curve kind {kind!r}")
    if sigma_phi is None and snr is not None:
        sigma_phi = float(phase_limit(snr))
    if kind == "phase_vs_snr":
        y = phase_limit(x)
    elif kind == "temp_vs_snr":
        y = temperature_limit(phase_limit(x), cf, delta_L)
    elif kind == "temp_vs_length":
        y = temperature_limit(sigma_phi, cf, x)
    else:
        y = averaged_limit(temperature_limit(sigma_phi, cf, delta_L), x)
    return LimitCurve(kind, x, np.asarray(y, dtype=float))
