"""Discrete-scatterer model of the sensing fibre and backscatter synthesis."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import DerivedGrid, ValidatedConfig


@dataclass(frozen=True)
class FiberRealization:
    positions: np.ndarray
    amplitudes: np.ndarray
    intrinsic_phases: np.ndarray
    attenuation_alpha: float

    def __len__(self) -> int:
        return len(self.positions)

    def subset(self, index) -> "FiberRealization":
        return FiberRealization(self.positions[index], self.amplitudes[index],
                                self.intrinsic_phases[index], self.attenuation_alpha)

    def scaled(self, factor: float) -> "FiberRealization":
        return FiberRealization(self.positions, self.amplitudes * factor,
                                self.intrinsic_phases, self.attenuation_alpha)


@dataclass(frozen=True)
class TemperatureProfile:
    z_start: float
    z_end: float
    delta_T: np.ndarray  # kelvin, indexed by frame

    @classmethod
    def ramp(cls, z_start: float, z_end: float, rate: float, frames: int) -> "TemperatureProfile":
        return cls(z_start, z_end, rate * np.arange(frames, dtype=float))

    def overlap_length(self, z):
        """Heated length between the zone start and ``z``."""
        return np.clip(np.minimum(z, self.z_end) - self.z_start, 0.0, None)


@dataclass
class ComplexTrace:
    """Complex baseband samples along fast time (last axis).

    ``start_index`` is the fast-time index of the first sample (0 for a full
    trace).  A 2-D ``samples`` array holds consecutive frames starting at
    ``frame_index``.
    """

    samples: np.ndarray
    sample_rate: float
    frame_index: int = 0
    start_index: int = 0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=complex)
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("trace contains non-finite samples")

    def __len__(self) -> int:
        return len(self.samples)

    def with_samples(self, samples: np.ndarray) -> "ComplexTrace":
        return ComplexTrace(samples, self.sample_rate, self.frame_index, self.start_index)


def scatterer_count(config: ValidatedConfig, grid: DerivedGrid) -> int:
    return int(round(config.scatterers_per_cell * config.fiber_length / grid.resolution_cell_length))


def sample_fiber(config: ValidatedConfig, grid: DerivedGrid, seed) -> FiberRealization:
    """Draw one random fibre.

    Scatterer positions are uniform on (0, L], field amplitudes Rayleigh and
    phases uniform.  The Rayleigh scale is set so that one resolution cell
    (on average ``Ns`` scatterers) returns ``backscatter_capture`` of the
    launched power before attenuation.
    """
    if config.scatterers_per_cell < 1:
        raise ValueError("scatterers_per_cell must be >= 1")
    rng = np.random.default_rng(seed)
    n = max(scatterer_count(config, grid), 1)
    length = config.fiber_length
    positions = np.sort(length - rng.uniform(0.0, length, n))
    scale = np.sqrt(config.backscatter_capture / (2.0 * config.scatterers_per_cell))
    amplitudes = rng.rayleigh(scale, n)
    phases = rng.uniform(0.0, 2 * np.pi, n)
    return FiberRealization(positions, amplitudes, phases, config.attenuation_alpha)


def scatterer_phase_offsets(fiber: FiberRealization, profile: TemperatureProfile,
                            cf: float, p: int) -> np.ndarray:
    if not 0 <= p < len(profile.delta_T):
        raise IndexError(f"frame {p} outside the temperature profile")
    return cf * profile.delta_T[p] * profile.overlap_length(fiber.positions)


class BackscatterSynthesizer:
    """Sliding-window scatterer sum for a rectangular pulse.

    Sample ``k`` collects every scatterer whose round-trip delay
    ``d = 2 z / v_g`` satisfies ``0 <= k T_s - d < tau``.  Delays stay
    continuous; the window bounds are found once by binary search and each
    frame costs one prefix sum over the scatterers that can reach the
    requested samples.
    """

    def __init__(self, fiber: FiberRealization, pulse, grid: DerivedGrid,
                 start: int = 0, stop: int | None = None):
        stop = grid.total_fast_samples if stop is None else stop
        self.start, self.stop = start, stop
        self.grid = grid
        delays = 2.0 * fiber.positions / grid.group_velocity
        t = np.arange(start, stop) * grid.sample_period
        lo = np.searchsorted(delays, t - pulse.duration, side="right")
        hi = np.searchsorted(delays, t, side="right")
        first = int(lo[0]) if len(lo) else 0
        last = int(hi[-1]) if len(hi) else 0
        self.select = slice(first, last)
        self.lo, self.hi = lo - first, hi - first
        z = fiber.positions[self.select]
        self.positions = z
        self.base = (pulse.peak_field * fiber.amplitudes[self.select]
                     * np.exp(1j * fiber.intrinsic_phases[self.select])
                     * np.exp(-2.0 * fiber.attenuation_alpha * z))

    def __call__(self, offsets: np.ndarray | None = None) -> np.ndarray:
        """Trace for per-scatterer phase offsets of shape (m,) or (frames, m).

        Offsets may cover the whole fibre or only ``self.select``.
        """
        c = self.base
        if offsets is not None:
            off = np.asarray(offsets)
            if off.shape[-1] != len(c):
                off = off[..., self.select]
            c = c * np.exp(1j * off)
        prefix = np.zeros(c.shape[:-1] + (len(self.base) + 1,), dtype=complex)
        np.cumsum(c, axis=-1, out=prefix[..., 1:])
        return prefix[..., self.hi] - prefix[..., self.lo]


def synthesize_backscatter(fiber: FiberRealization, offsets, pulse, grid: DerivedGrid,
                           frame_index: int = 0, start: int = 0,
                           stop: int | None = None) -> ComplexTrace:
    """Noiseless backscattered field for one probe pulse (samples ``start:stop``)."""
    synth = BackscatterSynthesizer(fiber, pulse, grid, start, stop)
    return ComplexTrace(synth(offsets), 1.0 / grid.sample_period, frame_index, start)


# --- binary trace dump -------------------------------------------------------

TRACE_MAGIC = b"OTDRTRC1"
_HEADER = struct.Struct("<8sQdQ")


def write_trace(path: str | Path, trace: ComplexTrace, metadata: dict | None = None) -> None:
    """Little-endian float64 (re, im) pairs after a 32-byte header, plus a
    ``.meta`` sidecar of ``key = value`` lines."""
    path = Path(path)
    interleaved = np.empty(2 * len(trace), dtype="<f8")
    interleaved[0::2] = trace.samples.real
    interleaved[1::2] = trace.samples.imag
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(TRACE_MAGIC, len(trace), float(trace.sample_rate), trace.frame_index))
        fh.write(interleaved.tobytes())
    meta = {"samples": len(trace), "sample_rate_hz": repr(float(trace.sample_rate)),
            "frame_index": trace.frame_index, "start_index": trace.start_index}
    meta.update(metadata or {})
    path.with_name(path.name + ".meta").write_text(
        "".join(f"{k} = {v}\n" for k, v in meta.items()), encoding="utf-8")


def read_trace(path: str | Path) -> ComplexTrace:
    raw = Path(path).read_bytes()
    magic, n, fs, frame = _HEADER.unpack_from(raw)
    if magic != TRACE_MAGIC:
        raise ValueError(f"{path}: not an OTDR trace file")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size, count=2 * n)
    return ComplexTrace(data[0::2] + 1j * data[1::2], fs, frame)
