"""Phase extraction, point selection and phase-to-temperature conversion.

:class:`PhaseTracker` wraps the pipeline as a scikit-learn style estimator:
``fit`` picks the reference and monitor samples from a stack of frames
(frames x fast-time samples), ``transform`` returns the temperature-change
estimate of every frame.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .config import DerivedGrid, ValidatedConfig


class ReferenceSelectionError(RuntimeError):
    pass


def wrap_phase(x):
    """Map angles to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(x, dtype=float), 2 * np.pi)


def estimate_phase(y):
    """Four-quadrant argument in (-pi, pi]; NaN marks a zero (fade-invalid) sample."""
    y = np.asarray(y)
    phi = np.angle(y)
    phi = np.where(phi == -np.pi, np.pi, phi)
    return np.where(y == 0, np.nan, phi)[()]


def circular_variance(phases, axis=0):
    return 1.0 - np.abs(np.nanmean(np.exp(1j * np.asarray(phases)), axis=axis))


def local_median(values: np.ndarray, block: int) -> np.ndarray:
    """Median of ``values`` over consecutive blocks, broadcast back per sample."""
    n = len(values)
    if n == 0:
        return values.copy()
    nblocks = max(n // block, 1)
    edges = np.linspace(0, n, nblocks + 1).astype(int)
    out = np.empty(n)
    for a, b in zip(edges[:-1], edges[1:]):
        out[a:b] = np.median(values[a:b])
    return out


def fade_mask(amplitude: np.ndarray, fraction: float, block: int = 4096) -> np.ndarray:
    """True where the amplitude is at least ``fraction`` of the local median."""
    amplitude = np.asarray(amplitude, dtype=float)
    return (amplitude > 0) & (amplitude >= fraction * local_median(amplitude, block))


def select_reference(phases: np.ndarray, amplitude: np.ndarray, candidates: np.ndarray,
                     tie_tolerance: float = 1e-12) -> int:
    """Column with the smallest slow-time circular variance among ``candidates``.

    Variances within ``tie_tolerance`` of the minimum count as ties and are
    broken by the largest mean amplitude.
    """
    idx = np.flatnonzero(candidates)
    if idx.size == 0:
        raise ReferenceSelectionError(
            "no reference candidate passes the fade threshold; "
            "try another seed or a lower fade_fraction")
    cv = circular_variance(phases[:, idx], axis=0)
    cv = np.where(np.isnan(cv), np.inf, cv)
    tied = idx[cv <= cv.min() + tie_tolerance]
    return int(tied[np.argmax(amplitude[tied])])


def phase_difference(phases: np.ndarray, k1: int, k2: int) -> np.ndarray:
    """wrap(phi_k2 - phi_k1) for every frame; NaN where either sample is invalid."""
    phases = np.asarray(phases, dtype=float)
    return wrap_phase(phases[:, k2] - phases[:, k1])


@dataclass(frozen=True)
class UnwrapResult:
    values: np.ndarray
    bridged: np.ndarray
    reliable: bool


def unwrap_slow_time(wrapped, max_step: float = np.pi / 2) -> UnwrapResult:
    """Nearest-branch unwrapping along slow time.

    Missing frames (NaN) are bridged by linear interpolation between their
    unwrapped neighbours and flagged.  The result is marked unreliable when
    any wrapped increment exceeds ``max_step`` in magnitude.
    """
    w = np.asarray(wrapped, dtype=float)
    missing = np.isnan(w)
    values = np.full_like(w, np.nan)
    good = np.flatnonzero(~missing)
    if good.size == 0:
        return UnwrapResult(values, missing, False)
    steps = wrap_phase(np.diff(w[good]))
    values[good] = w[good[0]] + np.concatenate(([0.0], np.cumsum(steps)))
    if missing.any():
        values[missing] = np.interp(np.flatnonzero(missing), good, values[good])
    reliable = bool(np.all(np.abs(steps) <= max_step))
    return UnwrapResult(values, missing, reliable)


def temperature_from_phase(delta_phi, cf: float, delta_L: float) -> np.ndarray:
    """Temperature change relative to frame 0 from the unwrapped phase difference."""
    if delta_L <= 0:
        raise ValueError("delta_L must be > 0")
    if cf <= 0:
        raise ValueError("Cf must be > 0")
    d = np.asarray(delta_phi, dtype=float)
    return (d - d[0]) / (cf * delta_L)


@dataclass(frozen=True)
class PhaseTrack:
    k1: int
    k2: int
    delta_L: float
    delta_phi: np.ndarray
    delta_T_hat: np.ndarray
    bridged: np.ndarray
    reliable: bool


def check_frames(X) -> np.ndarray:
    """Validate a frames x samples stack of complex baseband samples."""
    X = np.asarray(X)
    if X.ndim == 1:
        X = X[np.newaxis, :]
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D frames x samples array, got shape {X.shape}")
    if X.shape[0] < 1 or X.shape[1] < 2:
        raise ValueError(f"need at least one frame of two samples, got shape {X.shape}")
    X = X.astype(complex, copy=False)
    if not np.all(np.isfinite(X)):
        raise ValueError("frames contain non-finite samples")
    return X


class PhaseTracker(TransformerMixin, BaseEstimator):
    """Two-point phase tracker converting phase change to temperature change.

    Parameters
    ----------
    reference_distance, monitor_distance : float
        Requested reference (before the heated zone) and monitor distances, m.
    heating_zone_start, heating_zone_end : float
        Heated section of the fibre, m.
    conversion_constant : float
        Phase sensitivity in rad / (K m).
    sample_spacing : float
        Distance between fast-time samples, m.
    start_index : int
        Fast-time index of the first column of the data.
    guard : float
        Reference candidates must end at least this far before the zone.
    reference_search : float
        Half-width of the reference search window around ``reference_distance``.
    fade_fraction : float
        Samples below this fraction of the local median amplitude are fades.
    """

    def __init__(self, reference_distance=9_800.0, monitor_distance=10_050.0,
                 heating_zone_start=10_000.0, heating_zone_end=10_060.0,
                 conversion_constant=87.6, sample_spacing=0.1633, start_index=0,
                 guard=20.5, reference_search=100.0, fade_fraction=0.1, median_block=4096):
        self.reference_distance = reference_distance
        self.monitor_distance = monitor_distance
        self.heating_zone_start = heating_zone_start
        self.heating_zone_end = heating_zone_end
        self.conversion_constant = conversion_constant
        self.sample_spacing = sample_spacing
        self.start_index = start_index
        self.guard = guard
        self.reference_search = reference_search
        self.fade_fraction = fade_fraction
        self.median_block = median_block

    @classmethod
    def from_config(cls, config: ValidatedConfig, grid: DerivedGrid, start_index: int = 0,
                    **overrides) -> "PhaseTracker":
        # a filtered sample also sees half the FIR length beyond its own cell
        guard = grid.resolution_cell_length + (config.filter_taps_n // 2 + 1) * grid.sample_spacing
        params = dict(
            reference_distance=config.reference_distance,
            monitor_distance=config.monitor_distance,
            heating_zone_start=config.heating_zone[0],
            heating_zone_end=config.heating_zone[1],
            conversion_constant=config.cf,
            sample_spacing=grid.sample_spacing,
            start_index=start_index,
            guard=guard,
            reference_search=config.reference_search,
            fade_fraction=config.fade_fraction,
        )
        params.update(overrides)
        return cls(**params)

    def _distances(self, n: int) -> np.ndarray:
        return (self.start_index + np.arange(n)) * self.sample_spacing

    def fit(self, X, y=None):
        X = check_frames(X)
        d = self._distances(X.shape[1])
        amplitude = np.abs(X).mean(axis=0)
        valid = fade_mask(amplitude, self.fade_fraction, self.median_block)
        z0 = self.heating_zone_start

        candidates = (valid & (d < z0 - self.guard)
                      & (np.abs(d - self.reference_distance) <= self.reference_search))
        # phases are only needed where a reference may sit
        cols = np.flatnonzero(candidates)
        pick = select_reference(estimate_phase(X[:, cols]), amplitude[cols],
                                np.ones(cols.size, dtype=bool))
        k1 = int(cols[pick])

        monitors = np.flatnonzero(valid & (d > z0))
        if monitors.size == 0:
            raise ReferenceSelectionError("no valid monitor sample inside the heated zone")
        k2 = int(monitors[np.argmin(np.abs(d[monitors] - self.monitor_distance))])

        self.n_features_in_ = X.shape[1]
        self.amplitude_ = amplitude
        self.valid_mask_ = valid
        self.fade_exclusion_fraction_ = float(1.0 - valid.mean())
        self.reference_column_ = k1
        self.monitor_column_ = k2
        self.reference_index_ = self.start_index + k1
        self.monitor_index_ = self.start_index + k2
        self.delta_L_ = float(min(d[k2], self.heating_zone_end) - z0)
        return self

    def track(self, X) -> PhaseTrack:
        check_is_fitted(self, "monitor_column_")
        X = check_frames(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"fitted on {self.n_features_in_} samples per frame, got {X.shape[1]}")
        k1, k2 = self.reference_column_, self.monitor_column_
        phases = estimate_phase(X[:, [k1, k2]])
        unwrapped = unwrap_slow_time(phase_difference(phases, 0, 1))
        dT = temperature_from_phase(unwrapped.values, self.conversion_constant, self.delta_L_)
        return PhaseTrack(self.reference_index_, self.monitor_index_, self.delta_L_,
                          unwrapped.values, dT, unwrapped.bridged, unwrapped.reliable)

    def transform(self, X):
        return self.track(X).delta_T_hat
