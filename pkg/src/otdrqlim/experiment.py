"""Monte-Carlo harness: paired noisy / noiseless trials and their aggregation.

Every trial draws its fibre and noise from ``SeedSequence(master_seed,
spawn_key=(trial_index,))`` so results never depend on execution order or
on how trials are spread over worker processes.  Per-trial partial sums
are merged with :func:`math.fsum`, which is exactly rounded and therefore
independent of summation order.
"""
from __future__ import annotations

import json
import logging
import math
import os
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .config import DerivedGrid, ValidatedConfig, derive_grid
from .estimation import (PhaseTrack, PhaseTracker, ReferenceSelectionError, estimate_phase,
                         local_median, wrap_phase)
from .fiber import (BackscatterSynthesizer, ComplexTrace, TemperatureProfile, sample_fiber,
                    scatterer_phase_offsets)
from .limits import averaged_limit, phase_limit, temperature_limit
from .optics import amplify_with_ase, preamp_model, shape_pulse
from .receiver import (band_limit, check_lo_dominance, detect, in_band_noise_power,
                       receiver_model)

logger = logging.getLogger(__name__)

WRAP_DOMINATED_SIGMA = 0.5
CHUNK_SAMPLES = 1 << 19  # complex samples per vectorised block of frames
AXES = ("snr", "delta_L", "frames")


# --- SNR operating point -----------------------------------------------------

def expected_signal_power(config: ValidatedConfig, z: float) -> float:
    """Mean received backscatter power (after the preamp) from distance ``z``."""
    return (config.launch_peak_power * config.backscatter_capture * config.circulator_transmission
            * config.preamp_gain * math.exp(-4.0 * config.attenuation_alpha * z))


def noise_power(config: ValidatedConfig, noise_scale: float = 1.0) -> float:
    return in_band_noise_power(receiver_model(config), preamp_model(config).psd_per_pol, noise_scale)


def nominal_snr(config: ValidatedConfig, noise_scale: float = 1.0) -> float:
    """Expected mean per-sample SNR at the start of the heated zone."""
    if noise_scale == 0:
        return math.inf
    return expected_signal_power(config, config.heating_zone[0]) / noise_power(config, noise_scale)


def noise_scale_for_snr(config: ValidatedConfig, snr_db: float) -> float:
    return math.sqrt(nominal_snr(config) / 10 ** (snr_db / 10))


# --- single trial ------------------------------------------------------------

def tracking_window(config: ValidatedConfig, grid: DerivedGrid) -> tuple[int, int]:
    """Fast-time span holding the reference search window and the monitor points."""
    lo = config.reference_distance - config.reference_search
    hi = max(config.heating_zone[1], config.monitor_distance)
    start = max(int(math.floor(lo / grid.sample_spacing)) - 1, 0)
    stop = min(int(math.ceil(hi / grid.sample_spacing)) + 2, grid.total_fast_samples)
    return start, stop


@dataclass
class TrialResult:
    trial_index: int
    noise_scale: float
    noise_power: float
    nominal_snr: float
    start_index: int
    snr: np.ndarray | None  # frames x samples, per-sample SNR
    residuals: np.ndarray | None  # frames x samples, wrapped, NaN at fades
    region_start: int
    noisy_region: np.ndarray
    truth_region: np.ndarray
    tracks: tuple[PhaseTrack, PhaseTrack]
    delta_L_actual: float
    fade_exclusion_fraction: float
    config: ValidatedConfig = field(repr=False)

    def compact(self) -> "TrialResult":
        """Drop the full-length residual and SNR arrays."""
        self.snr = None
        self.residuals = None
        return self


class TrialError(RuntimeError):
    def __init__(self, trial_index: int, message: str):
        super().__init__(f"trial {trial_index}: {message}")
        self.trial_index = trial_index


def _resolve_window(window: str, axis: str | None = None) -> str:
    if window == "auto":
        return "full" if axis in (None, "snr") else "tracking"
    if window not in ("full", "tracking"):
        raise ValueError(f"unknown window {window!r}")
    return window


def simulate_frames(config: ValidatedConfig, trial_index: int, noise_scale: float,
                    frames: int, start: int = 0, stop: int | None = None
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Noisy and noiseless band-limited samples ``start:stop`` of ``frames`` pulses.

    Both paths share the fibre, the temperature trajectory, the amplifier
    and receiver models and the band-limit filter; the noisy path adds ASE
    and shot noise scaled by ``noise_scale``.  Returns two frames x samples
    arrays.
    """
    grid = derive_grid(config)
    K = grid.total_fast_samples
    stop = K if stop is None else stop
    if not 0 <= start < stop <= K:
        raise ValueError(f"sample range {start}:{stop} outside 0:{K}")
    seq = np.random.SeedSequence(config.rng_seed, spawn_key=(trial_index,))
    fiber_seq, noise_seq = seq.spawn(2)
    fiber = sample_fiber(config, grid, fiber_seq)
    rng = np.random.default_rng(noise_seq)

    pulse = shape_pulse(config, grid)
    ase = preamp_model(config)
    rx = receiver_model(config)
    rx_noisy = rx.scaled(noise_scale)
    profile = TemperatureProfile.ramp(*config.heating_zone, config.heating_rate, frames)

    # filter margin so the cropped samples see a full FIR support
    margin = config.filter_taps_n // 2
    a, b = max(start - margin, 0), min(stop + margin, K)
    crop = slice(start - a, start - a + (stop - start))
    synth = BackscatterSynthesizer(fiber, pulse, grid, a, b)
    transmission = math.sqrt(config.circulator_transmission)

    local = fiber.subset(synth.select)
    chunk = max(1, CHUNK_SAMPLES // (b - a))
    n = stop - start
    truth = np.empty((frames, n), dtype=complex)
    noisy = np.empty((frames, n), dtype=complex)
    for p0 in range(0, frames, chunk):
        ps = range(p0, min(p0 + chunk, frames))
        offsets = np.stack([scatterer_phase_offsets(local, profile, config.cf, p) for p in ps])
        field_p = ComplexTrace(synth(offsets) * transmission, config.adc_rate, p0, a)
        clean = detect(amplify_with_ase(field_p, ase, None, 0.0), rx, None, noise_enabled=False)
        truth[ps.start:ps.stop] = band_limit(clean.samples, rx.filter_taps)[:, crop]
        if noise_scale > 0:
            amplified = amplify_with_ase(field_p, ase, rng, noise_scale)
            received = detect(amplified, rx_noisy, rng)
            noisy[ps.start:ps.stop] = band_limit(received.samples, rx.filter_taps)[:, crop]
        else:
            noisy[ps.start:ps.stop] = truth[ps.start:ps.stop]
    return noisy, truth


def run_trial(config: ValidatedConfig, trial_index: int, noise_scale: float | None = None,
              *, window: str = "full", frames: int | None = None) -> TrialResult:
    """Simulate one fibre through the full chain, noisy and noiseless, and
    extract residuals, per-sample SNR and the phase tracks.

    ``window`` is ``"full"`` (every fast-time sample) or ``"tracking"``
    (only the samples around the reference and monitor points).
    """
    if noise_scale is None:
        noise_scale = config.source.noise_scale
    frames = config.frames if frames is None else frames
    grid = derive_grid(config)
    window = _resolve_window(window)
    region = tracking_window(config, grid)
    start, stop = (0, grid.total_fast_samples) if window == "full" else region
    noisy, truth = simulate_frames(config, trial_index, noise_scale, frames, start, stop)
    rx = receiver_model(config)
    ase = preamp_model(config)

    if trial_index == 0 and noise_scale > 0:
        check_lo_dominance(rx, expected_signal_power(config, 0.0))

    sigma2 = in_band_noise_power(rx, ase.psd_per_pol, noise_scale)
    amplitude = np.abs(truth)
    median = local_median(amplitude.mean(axis=0), 4096)
    valid = amplitude >= config.fade_fraction * median
    valid &= amplitude > 0
    residuals = np.where(valid, wrap_phase(estimate_phase(noisy) - estimate_phase(truth)), np.nan)
    snr = amplitude**2 / sigma2 if sigma2 > 0 else np.full(amplitude.shape, np.inf)

    r0, r1 = region[0] - start, region[1] - start
    noisy_region, truth_region = noisy[:, r0:r1], truth[:, r0:r1]
    tracker = PhaseTracker.from_config(config, grid, start_index=region[0])
    try:
        tracker.fit(noisy_region)
    except ReferenceSelectionError as exc:
        raise TrialError(trial_index, str(exc)) from exc
    tracks = (tracker.track(noisy_region), tracker.track(truth_region))

    return TrialResult(
        trial_index=trial_index,
        noise_scale=noise_scale,
        noise_power=sigma2,
        nominal_snr=nominal_snr(config, noise_scale),
        start_index=start,
        snr=snr,
        residuals=residuals,
        region_start=region[0],
        noisy_region=noisy_region.copy(),
        truth_region=truth_region.copy(),
        tracks=tracks,
        delta_L_actual=tracker.delta_L_,
        fade_exclusion_fraction=float(1.0 - valid.mean()),
        config=config,
    )


def run_bypass(config: ValidatedConfig, snr: float, n_samples: int, seed: int = 0) -> tuple[float, float]:
    """Constant tone through preamp, receiver and band limit, no fibre.

    The tone amplitude is set so that the band-limited tone power is
    ``snr`` times the calibrated in-band noise power.  Returns the measured
    phase-residual standard deviation and the quantum-limit value.
    """
    ase = preamp_model(config)
    rx = receiver_model(config)
    sigma2 = in_band_noise_power(rx, ase.psd_per_pol)
    margin = config.filter_taps_n
    amp = math.sqrt(snr * sigma2 / ase.gain)
    tone = ComplexTrace(np.full(n_samples + 2 * margin, amp, dtype=complex), config.adc_rate)
    rng = np.random.default_rng(seed)
    noisy = band_limit(detect(amplify_with_ase(tone, ase, rng), rx, rng).samples, rx.filter_taps)
    clean = band_limit(detect(amplify_with_ase(tone, ase, None, 0.0), rx, noise_enabled=False).samples,
                       rx.filter_taps)
    res = wrap_phase(np.angle(noisy) - np.angle(clean))[margin:-margin]
    return float(np.std(res)), float(phase_limit(snr))


# --- aggregation -------------------------------------------------------------

@dataclass
class PhaseCurve:
    edges_db: np.ndarray
    centers_db: np.ndarray
    sigma_num: np.ndarray
    sigma_limit: np.ndarray
    counts: np.ndarray
    low_confidence: np.ndarray
    wrap_dominated: np.ndarray


def phase_partial(trial: TrialResult, edges_db: np.ndarray) -> np.ndarray:
    """Per-bin (count, sum, sum of squares) of one trial's residuals."""
    if trial.residuals is None:
        raise ValueError(f"trial {trial.trial_index} was compacted; residuals are gone")
    res = trial.residuals.ravel()
    ok = ~np.isnan(res)
    with np.errstate(divide="ignore"):
        snr_db = 10 * np.log10(trial.snr.ravel()[ok])
    res = res[ok]
    idx = np.searchsorted(edges_db, snr_db, side="right") - 1
    inside = (idx >= 0) & (idx < len(edges_db) - 1)
    idx, res = idx[inside], res[inside]
    nb = len(edges_db) - 1
    return np.stack([
        np.bincount(idx, minlength=nb).astype(float),
        np.bincount(idx, weights=res, minlength=nb),
        np.bincount(idx, weights=res * res, minlength=nb),
    ])


def finish_phase_curve(partials: Sequence[np.ndarray], edges_db, min_count: int = 100) -> PhaseCurve:
    edges_db = np.asarray(edges_db, dtype=float)
    stacked = np.asarray(partials)
    nb = len(edges_db) - 1
    pooled = np.array([[math.fsum(stacked[:, r, j]) for j in range(nb)] for r in range(3)])
    n, s1, s2 = pooled
    if n.sum() == 0:
        raise ValueError("no residuals fall inside the SNR bins")
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = s1 / n
        sigma = np.sqrt(np.maximum(s2 / n - mean**2, 0.0))
    sigma[n == 0] = np.nan
    centers = 0.5 * (edges_db[:-1] + edges_db[1:])
    limit = phase_limit(10 ** (centers / 10))
    return PhaseCurve(edges_db, centers, sigma, limit, n.astype(int), n < min_count,
                      limit > WRAP_DOMINATED_SIGMA)


def aggregate_phase(trials: Iterable[TrialResult], bin_edges_db, min_count: int = 100) -> PhaseCurve:
    """Phase-residual sigma versus per-sample SNR, pooled over trials."""
    trials = sorted(trials, key=lambda t: t.trial_index)
    if len(trials) < 2:
        raise ValueError("need at least two trials")
    edges = np.asarray(bin_edges_db, dtype=float)
    return finish_phase_curve([phase_partial(t, edges) for t in trials], edges, min_count)


@dataclass
class TemperaturePoint:
    delta_L: float
    delta_L_actual: float
    sigma_num: float
    sigma_pred: float
    sigma_limit: float
    sigma_phi_monitor: float
    monitor_snr_db: float
    nominal_snr_db: float
    n_steps: int
    n_trials: int
    unreliable_tracks: int


@dataclass(frozen=True)
class MonitorTrack:
    """Noisy and noiseless tracks of one reference/monitor pair of a trial."""

    delta_L: float
    noisy: PhaseTrack
    truth: PhaseTrack
    residual_sq_mean: float  # mean squared phase residual at the monitor sample
    signal_power: float  # mean noiseless |y|^2 at the monitor sample


@dataclass
class TrialSummary:
    """What the temperature and frame aggregations need from a trial."""

    trial_index: int
    noise_power: float
    nominal_snr: float
    n_frames: int
    fade_exclusion_fraction: float
    monitors: dict
    config: ValidatedConfig = field(repr=False)


def monitor_track(trial: TrialResult, monitor_distance: float) -> MonitorTrack:
    cfg = trial.config
    tracker = PhaseTracker.from_config(cfg, derive_grid(cfg), start_index=trial.region_start,
                                       monitor_distance=monitor_distance)
    tracker.fit(trial.noisy_region)
    col = tracker.monitor_column_
    noisy, truth = trial.noisy_region[:, col], trial.truth_region[:, col]
    r = wrap_phase(estimate_phase(noisy) - estimate_phase(truth))
    return MonitorTrack(
        delta_L=tracker.delta_L_,
        noisy=tracker.track(trial.noisy_region),
        truth=tracker.track(trial.truth_region),
        residual_sq_mean=float(np.mean(r * r)),
        signal_power=float(np.mean(np.abs(truth) ** 2)),
    )


def summarize_trial(trial: TrialResult, monitor_distances: Iterable[float]) -> TrialSummary:
    return TrialSummary(
        trial_index=trial.trial_index,
        noise_power=trial.noise_power,
        nominal_snr=trial.nominal_snr,
        n_frames=len(trial.truth_region),
        fade_exclusion_fraction=trial.fade_exclusion_fraction,
        monitors={float(z): monitor_track(trial, z) for z in monitor_distances},
        config=trial.config,
    )


def _monitor(t, z: float) -> MonitorTrack:
    if isinstance(t, TrialSummary):
        try:
            return t.monitors[float(z)]
        except KeyError:
            raise ValueError(f"trial {t.trial_index} has no summary for monitor at {z} m") from None
    return monitor_track(t, z)


def _frame_errors(noisy: PhaseTrack, truth: PhaseTrack, rate: float, detrend: str) -> np.ndarray:
    """Per-frame temperature error (K) of the noisy track, origin included."""
    if detrend == "truth":
        return noisy.delta_T_hat - truth.delta_T_hat
    p = np.arange(len(noisy.delta_T_hat))
    if detrend == "rate":
        return noisy.delta_T_hat - rate * p
    if detrend == "fit":
        coef = np.polyfit(p, noisy.delta_T_hat, 1) if len(p) > 1 else (0.0, noisy.delta_T_hat[0])
        return noisy.delta_T_hat - np.polyval(coef, p)
    raise ValueError(f"unknown detrend mode {detrend!r}")


def aggregate_temperature(trials: Sequence[TrialResult | TrialSummary], delta_L_list: Sequence[float],
                          detrend: str = "truth") -> list[TemperaturePoint]:
    """Frame-to-frame temperature-change sigma per heated length.

    For each dL the monitor sits at zone start + dL.  The deterministic part
    of each frame step is removed (by default with the noiseless twin) and
    the remaining steps are pooled over frames and trials.  Tracks with a
    cycle slip (flagged unreliable) are left out and counted.  The
    ``sigma_pred`` counterpart evaluates the temperature limit with
    the measured phase-residual variance at the monitor sample of each trial.
    """
    trials = sorted(trials, key=lambda t: t.trial_index)
    if not trials:
        raise ValueError("no trials to aggregate")
    cfg = trials[0].config
    z0, z1 = cfg.heating_zone
    points = []
    for dL in delta_L_list:
        if not 0 < dL <= z1 - z0:
            raise ValueError(f"delta_L = {dL} m does not fit the {z1 - z0:g} m heated zone")
        sq, n_steps, pred, phi_sq, dls, snrs, unreliable = [], 0, [], [], [], [], 0
        for t in trials:
            m = _monitor(t, z0 + dL)
            if not m.noisy.reliable:
                unreliable += 1
                continue
            err = _frame_errors(m.noisy, m.truth, cfg.heating_rate, detrend)
            steps = np.diff(err)
            sq.append(math.fsum(steps * steps))
            n_steps += len(steps)
            phi_sq.append(m.residual_sq_mean)
            pred.append(2 * m.residual_sq_mean / (cfg.cf * m.delta_L) ** 2)
            dls.append(m.delta_L)
            snrs.append(m.signal_power / t.noise_power if t.noise_power > 0 else math.inf)
        if not dls:
            raise ValueError(f"every monitor track at delta_L = {dL} m is unreliable")
        nom = float(np.median([t.nominal_snr for t in trials]))
        dl_mean = math.fsum(dls) / len(dls)
        sigma_phi = math.sqrt(math.fsum(phi_sq) / len(phi_sq))
        points.append(TemperaturePoint(
            delta_L=float(dL),
            delta_L_actual=dl_mean,
            sigma_num=math.sqrt(math.fsum(sq) / n_steps) if n_steps else math.nan,
            sigma_pred=math.sqrt(math.fsum(pred) / len(pred)),
            sigma_limit=float(temperature_limit(phase_limit(nom), cfg.cf, dl_mean))
            if math.isfinite(nom) else 0.0,
            sigma_phi_monitor=sigma_phi,
            monitor_snr_db=float(10 * np.log10(np.median(snrs))),
            nominal_snr_db=float(10 * np.log10(nom)),
            n_steps=n_steps,
            n_trials=len(trials),
            unreliable_tracks=unreliable,
        ))
    return points


@dataclass
class FramePoint:
    frames: int
    sigma_num: float
    sigma_limit: float
    relative_sigma: float
    n_pairs: int
    excluded_tracks: int = 0


def _block_pairs(err: np.ndarray, P: int) -> np.ndarray:
    nblocks = len(err) // P
    if nblocks < 2:
        return np.empty(0)
    return np.diff(err[: nblocks * P].reshape(nblocks, P).mean(axis=1))


def aggregate_frames(trials: Sequence[TrialResult | TrialSummary], frames_grid: Sequence[int],
                     delta_L: float | None = None, delta_L_list: Sequence[float] | None = None,
                     detrend: str = "truth") -> list[FramePoint]:
    """Uncertainty of the change between consecutive P-frame averages.

    With P = 1 this is the frame-to-frame uncertainty.  ``sigma_num`` pools
    the monitor at ``delta_L`` (default: configured monitor) over trials.
    ``relative_sigma`` divides every track by its own single-frame step
    sigma before pooling, over the monitors of ``delta_L_list`` as well,
    so fibres whose monitor sits near a fade do not dominate; uncorrelated
    frames give ``relative_sigma = 1 / sqrt(P)``.  Tracks flagged unreliable
    (a cycle slip makes block averages meaningless) are left out and counted.
    """
    trials = sorted(trials, key=lambda t: t.trial_index)
    if not trials:
        raise ValueError("no trials to aggregate")
    cfg = trials[0].config
    z0 = cfg.heating_zone[0]
    main = cfg.monitor_distance if delta_L is None else z0 + delta_L
    others = [z0 + dL for dL in (delta_L_list or ())]
    grid = [int(P) for P in frames_grid]
    t0 = trials[0]
    n_frames = t0.n_frames if isinstance(t0, TrialSummary) else len(t0.truth_region)
    if any(n_frames // P < 2 for P in grid):
        raise ValueError(f"{n_frames} frames cannot hold two blocks of {max(grid)}")

    abs_sq = {P: [] for P in grid}
    abs_n = dict.fromkeys(grid, 0)
    rel_sq = {P: [] for P in grid}
    rel_n = dict.fromkeys(grid, 0)
    pred, excluded = [], 0
    for t in trials:
        for j, monitor in enumerate([main] + [m for m in others if m != main]):
            m = _monitor(t, monitor)
            if not m.noisy.reliable:
                excluded += 1
                continue
            err = _frame_errors(m.noisy, m.truth, cfg.heating_rate, detrend)
            step_var = float(np.mean(np.diff(err) ** 2))
            if j == 0:
                pred.append(2 * m.residual_sq_mean / (cfg.cf * m.delta_L) ** 2)
            for P in grid:
                d = _block_pairs(err, P)
                if j == 0:
                    abs_sq[P].append(math.fsum(d * d))
                    abs_n[P] += len(d)
                if step_var > 0:
                    rel_sq[P].append(math.fsum(d * d) / step_var)
                    rel_n[P] += len(d)
    if not pred:
        raise ValueError("every monitor track is unreliable; nothing to average")
    sigma_step = math.sqrt(math.fsum(pred) / len(pred))
    return [FramePoint(
        frames=P,
        sigma_num=math.sqrt(math.fsum(abs_sq[P]) / abs_n[P]) if abs_n[P] else math.nan,
        sigma_limit=float(averaged_limit(sigma_step, P)),
        relative_sigma=math.sqrt(math.fsum(rel_sq[P]) / rel_n[P]) if rel_n[P] else math.nan,
        n_pairs=abs_n[P],
        excluded_tracks=excluded,
    ) for P in grid]


# --- sweeps and reports --------------------------------------------------------

@dataclass
class UncertaintyReport:
    axis: str
    grid: tuple
    config: ValidatedConfig
    ensemble_size: int
    window: str
    phase: PhaseCurve | None = None
    temperature: dict = field(default_factory=dict)  # nominal SNR dB -> [TemperaturePoint]
    frames: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    fade_exclusion_fraction: float = math.nan
    tracks: list = field(default_factory=list)  # (nominal SNR dB, trial index, PhaseTrack)

    def write(self, out_dir: str | Path, gnuplot: bool = False, extra_manifest: dict | None = None
              ) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        if self.phase is not None:
            c = self.phase
            rows = [(c.centers_db[i], c.sigma_num[i], c.sigma_limit[i], c.counts[i],
                     _flags(low_confidence=c.low_confidence[i], wrap_dominated=c.wrap_dominated[i]))
                    for i in range(len(c.centers_db))]
            written.append(_write_csv(out / "phase_vs_snr.csv",
                                      ("snr_db", "sigma_num_rad", "sigma_limit_rad", "n_samples", "flags"),
                                      rows))
        if self.axis == "snr":
            by_dl = {}
            for snr_db, pts in self.temperature.items():
                for pt in pts:
                    by_dl.setdefault(pt.delta_L, []).append((snr_db, pt))
            for dL, items in by_dl.items():
                rows = [(snr_db, pt.monitor_snr_db, pt.delta_L_actual, pt.sigma_num,
                         pt.sigma_pred, pt.sigma_limit, pt.sigma_phi_monitor, pt.n_steps,
                         _flags(unreliable_tracks=pt.unreliable_tracks))
                        for snr_db, pt in items]
                written.append(_write_csv(
                    out / f"temp_vs_snr_dL{dL:g}.csv",
                    ("snr_db", "monitor_snr_db", "delta_L_actual_m", "sigma_num_k",
                     "sigma_pred_k", "sigma_limit_k", "sigma_phi_monitor_rad", "n_steps", "flags"),
                    rows))
        elif self.axis == "delta_L":
            for snr_db, pts in self.temperature.items():
                rows = [(pt.delta_L, pt.delta_L_actual, pt.sigma_num, pt.sigma_pred,
                         pt.sigma_limit, pt.sigma_phi_monitor, pt.monitor_snr_db, pt.n_steps,
                         _flags(unreliable_tracks=pt.unreliable_tracks)) for pt in pts]
                written.append(_write_csv(
                    out / "temp_vs_length.csv",
                    ("delta_L_m", "delta_L_actual_m", "sigma_num_k", "sigma_pred_k",
                     "sigma_limit_k", "sigma_phi_monitor_rad", "monitor_snr_db", "n_steps", "flags"),
                    rows))
        elif self.axis == "frames":
            rows = [(f.frames, f.sigma_num, f.sigma_limit, f.relative_sigma, f.n_pairs,
                     _flags(excluded_tracks=f.excluded_tracks)) for f in self.frames]
            written.append(_write_csv(out / "temp_vs_frames.csv",
                                      ("frames", "sigma_num_k", "sigma_limit_k", "relative_sigma",
                                       "n_block_pairs", "flags"), rows))
        if gnuplot:
            written.extend(_write_gnuplot(out, written))
        if self.tracks:
            written.append(_write_csv(out / "tracks.csv", TRACK_HEADER, _track_rows(self.tracks)))
        written.append(self._write_manifest(out / "manifest.json", extra_manifest))
        return written

    def _write_manifest(self, path: Path, extra: dict | None) -> Path:
        manifest = {
            "axis": self.axis,
            "grid": list(self.grid),
            "window": self.window,
            "ensemble_size": self.ensemble_size,
            "master_seed": self.config.rng_seed,
            "fade_exclusion_fraction": self.fade_exclusion_fraction,
            "fade_fraction": self.config.fade_fraction,
            "conversion_constant_cf": self.config.cf,
            "failures": [list(f) for f in self.failures],
            "config": asdict(self.config.source),
            "version": __version__,
            "git_describe": git_describe(),
        }
        manifest.update(extra or {})
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n",
                        encoding="utf-8")
        return path


TRACK_HEADER = ("snr_db", "trial", "frame", "k1", "k2", "delta_L_actual_m", "delta_phi_rad",
                "delta_T_k", "flags")


def _track_rows(tracks):
    for snr_db, trial, tr in tracks:
        for p, (phi, dT, gap) in enumerate(zip(tr.delta_phi, tr.delta_T_hat, tr.bridged)):
            yield (snr_db, trial, p, tr.k1, tr.k2, tr.delta_L, phi, dT,
                   _flags(bridged=bool(gap), unreliable=not tr.reliable))


def _flags(**named) -> str:
    return ";".join(k if v is True else f"{k}={v}" for k, v in named.items() if v) or ""


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header: Sequence[str], rows) -> Path:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _write_gnuplot(out: Path, csv_paths: Sequence[Path]) -> list[Path]:
    """One gnuplot script per CSV plotting every ``sigma_*`` column against the first."""
    scripts = []
    for p in csv_paths:
        header = p.read_text(encoding="utf-8").splitlines()[0].split(",")
        cols = [(i + 1, h) for i, h in enumerate(header) if h.startswith("sigma_")]
        style = lambda h: "points" if h.startswith("sigma_num") else "lines"
        plots = ", \\\n     ".join(
            f"'{p.name}' every ::1 using 1:{i} with {style(h)} title '{h}'" for i, h in cols)
        xlog = "" if header[0] == "snr_db" else "set logscale x\n"
        script = p.with_suffix(".gp")
        script.write_text(
            "set datafile separator ','\nset key noenhanced\n"
            f"{xlog}set logscale y\nset xlabel '{header[0]}' noenhanced\n"
            f"plot {plots}\n", encoding="utf-8")
        scripts.append(script)
    return scripts


def git_describe() -> str:
    try:
        return subprocess.run(["git", "describe", "--always", "--tags"], cwd=Path(__file__).parent,
                              capture_output=True, text=True, timeout=5, check=True).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _trial_task(args):
    config, trial_index, noise_scale, window, frames, edges, monitors = args
    try:
        trial = run_trial(config, trial_index, noise_scale, window=window, frames=frames)
        summary = summarize_trial(trial, monitors)
    except (TrialError, ReferenceSelectionError) as exc:
        return None, None, (trial_index, noise_scale, str(exc))
    return phase_partial(trial, edges), summary, None


def resolve_workers(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("OTDRQLIM_THREADS", "1") or 1)
    return threads if threads > 0 else (os.cpu_count() or 1)


def _run_point(config, noise_scale, fibers, window, frames, edges, workers, monitors=()):
    tasks = [(config, i, noise_scale, window, frames, edges, tuple(monitors)) for i in range(fibers)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_trial_task, tasks))
    else:
        results = [_trial_task(t) for t in tasks]
    partials = [r[0] for r in results if r[0] is not None]
    trials = [r[1] for r in results if r[1] is not None]
    failures = [r[2] for r in results if r[2] is not None]
    if len(trials) < 0.9 * fibers:
        raise RuntimeError(f"{len(failures)} of {fibers} trials failed: {failures[:3]}")
    return partials, trials, failures


def default_bin_edges(config: ValidatedConfig) -> np.ndarray:
    s = config.source
    n = int(round((s.bin_max_db - s.bin_min_db) / s.bin_width_db))
    return s.bin_min_db + s.bin_width_db * np.arange(n + 1)


def sweep(config: ValidatedConfig, axis: str, grid: Sequence | None = None, *,
          fibers: int | None = None, threads: int | None = 1, window: str | None = None,
          bin_edges_db=None, noise_scale: float | None = None) -> UncertaintyReport:
    """Run an ensemble over one axis and aggregate against the analytic limits.

    ``snr``: grid of nominal SNR (dB, at the heated-zone start); phase
    residuals of every point are pooled into one curve over per-sample SNR
    and the temperature sigma is reported per (SNR, dL).
    ``delta_L``: grid of heated lengths at the configured ``snr_db``.
    ``frames``: grid of averaging lengths at the configured ``snr_db``; the
    configured frame count must hold at least two blocks of the largest.
    A fixed ``noise_scale`` (e.g. 0 for a noiseless run) overrides the
    scale derived from each SNR point.
    """
    if axis not in AXES:
        raise ValueError(f"unknown sweep axis {axis!r}")
    s = config.source
    fibers = s.fibers if fibers is None else fibers
    window = _resolve_window(window or s.window, axis)
    workers = resolve_workers(threads)
    edges = default_bin_edges(config) if bin_edges_db is None else np.asarray(bin_edges_db, float)
    if grid is None:
        grid = {"snr": s.snr_db_grid, "delta_L": s.delta_l_list, "frames": s.frames_grid}[axis]
    grid = tuple(grid)
    if not grid:
        raise ValueError("empty sweep grid")
    if axis == "frames" and config.frames < 2 * max(grid):
        raise ValueError(f"frames = {config.frames} cannot hold two blocks of {max(grid)}")

    if axis == "delta_L":
        zone = config.heating_zone[1] - config.heating_zone[0]
        bad = [dL for dL in grid if not 0 < dL <= zone]
        if bad:
            raise ValueError(f"delta_L {bad} outside the {zone:g} m heated zone")
    report = UncertaintyReport(axis, grid, config, fibers, window)
    points = grid if axis == "snr" else (s.snr_db,)
    z0 = config.heating_zone[0]
    lengths = grid if axis == "delta_L" else s.delta_l_list
    monitors = sorted({z0 + dL for dL in lengths} | {config.monitor_distance})
    all_partials, fade = [], []
    for snr_db in points:
        scale = noise_scale_for_snr(config, snr_db) if noise_scale is None else noise_scale
        partials, trials, failures = _run_point(config, scale, fibers, window, config.frames,
                                                edges, workers, monitors)
        all_partials.extend(partials)
        report.failures.extend(failures)
        fade.extend(t.fade_exclusion_fraction for t in trials)
        report.tracks.extend((float(snr_db), t.trial_index,
                              t.monitors[float(config.monitor_distance)].noisy) for t in trials)
        if axis == "snr":
            report.temperature[float(snr_db)] = aggregate_temperature(trials, s.delta_l_list, s.detrend)
        elif axis == "delta_L":
            report.temperature[float(snr_db)] = aggregate_temperature(trials, grid, s.detrend)
        else:
            report.frames = aggregate_frames(trials, grid, delta_L_list=s.delta_l_list,
                                             detrend=s.detrend)
    report.phase = finish_phase_curve(all_partials, edges)
    report.fade_exclusion_fraction = math.fsum(fade) / len(fade)
    return report
