"""System configuration, unit conversion and the fast-time sampling grid.

All computation downstream of :func:`validate` runs in linear SI units.
Decibel quantities only exist on :class:`SystemConfig`, i.e. at the
config-file / command-line boundary.
"""
from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0
PLANCK_CONSTANT = 6.62607015e-34


class ConfigError(ValueError):
    """A configuration value violates a named invariant."""

    def __init__(self, invariant: str, message: str):
        super().__init__(f"{invariant}: {message}")
        self.invariant = invariant


def db_to_linear(x):
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(np.asarray(x, dtype=float))


def dbm_to_watts(x):
    return 1e-3 * db_to_linear(x)


def watts_to_dbm(x):
    return linear_to_db(np.asarray(x, dtype=float) / 1e-3)


def db_per_km_to_field_alpha(x: float) -> float:
    """Power attenuation in dB/km -> field amplitude attenuation in 1/m."""
    return x * math.log(10.0) / 20.0 / 1e3


@dataclass(frozen=True)
class PhysicalConstants:
    speed_of_light: float = SPEED_OF_LIGHT
    planck_constant: float = PLANCK_CONSTANT
    group_index: float = 1.468
    thermo_optic_coefficient: float = 1.0e-5
    thermal_expansion_coefficient: float = 0.55e-6

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ConfigError("positive-constants", f"{f.name} must be > 0")
        if self.group_index <= 1:
            raise ConfigError("group-index", "group_index must exceed 1")

    @property
    def group_velocity(self) -> float:
        return self.speed_of_light / self.group_index


# section each key is written under in a config file
SECTIONS = {
    "source": (
        "wavelength_m", "pulse_rate_hz", "pulse_duration_s", "booster_gain_db",
        "booster_nf_db", "launch_peak_power_dbm",
    ),
    "fiber": (
        "fiber_length_m", "attenuation_db_per_km", "group_index",
        "thermo_optic_coefficient", "thermal_expansion_coefficient",
        "scatterers_per_cell", "backscatter_capture_db_per_cell", "circulator_loss_db",
    ),
    "receiver": (
        "preamp_gain_db", "preamp_nf_db", "lo_power_dbm", "receiver_bandwidth_hz",
        "adc_rate_hz", "filter_taps_n", "thermal_psd", "fade_fraction",
    ),
    "heating": (
        "heating_zone_start_m", "heating_zone_end_m", "heating_rate_k_per_frame",
        "conversion_constant_cf", "reference_distance_m", "monitor_distance_m",
        "reference_search_m",
    ),
    "experiment": (
        "frames", "fibers", "rng_seed", "noise_scale", "snr_db", "snr_db_grid",
        "delta_l_list", "frames_grid", "bin_width_db", "bin_min_db", "bin_max_db",
        "detrend", "window", "logical_slow_time",
    ),
}


@dataclass(frozen=True)
class SystemConfig:
    """User-facing parameters, in the units they are written in a config file."""

    # source / launch
    wavelength_m: float = 1550e-9
    pulse_rate_hz: float = 100e3
    pulse_duration_s: float = 100e-9
    booster_gain_db: float = 22.0
    booster_nf_db: float = 3.0
    launch_peak_power_dbm: float = 23.0
    # fiber
    fiber_length_m: float = 40e3
    attenuation_db_per_km: float = 0.2
    group_index: float = 1.468
    thermo_optic_coefficient: float = 1.0e-5
    thermal_expansion_coefficient: float = 0.55e-6
    scatterers_per_cell: int = 20
    backscatter_capture_db_per_cell: float = -72.0
    circulator_loss_db: float = 0.0
    # receiver
    preamp_gain_db: float = 22.0
    preamp_nf_db: float = 3.0
    lo_power_dbm: float = 0.0
    receiver_bandwidth_hz: float = 300e6
    adc_rate_hz: float = 625e6
    filter_taps_n: int = 127
    thermal_psd: float = 0.0
    fade_fraction: float = 0.1
    # heating and tracking points
    heating_zone_start_m: float = 10_000.0
    heating_zone_end_m: float = 10_060.0
    heating_rate_k_per_frame: float = 1e-6
    conversion_constant_cf: float | None = None
    reference_distance_m: float = 9_800.0
    monitor_distance_m: float = 10_050.0
    reference_search_m: float = 100.0
    # experiment
    frames: int = 20
    fibers: int = 100
    rng_seed: int = 20251016
    noise_scale: float = 1.0
    snr_db: float = 35.0
    snr_db_grid: tuple[float, ...] = (20.0, 25.0, 30.0, 35.0)
    delta_l_list: tuple[float, ...] = (1.0, 2.0, 5.0, 10.0, 20.0, 50.0)
    frames_grid: tuple[int, ...] = (1, 10, 100)
    bin_width_db: float = 1.0
    bin_min_db: float = -10.0
    bin_max_db: float = 50.0
    detrend: str = "truth"
    window: str = "auto"
    logical_slow_time: bool = True

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)

    @property
    def constants(self) -> PhysicalConstants:
        return PhysicalConstants(
            group_index=self.group_index,
            thermo_optic_coefficient=self.thermo_optic_coefficient,
            thermal_expansion_coefficient=self.thermal_expansion_coefficient,
        )


def cf_from_constants(wavelength: float, constants: PhysicalConstants) -> float:
    """Round-trip phase sensitivity in rad per kelvin per metre of heated fibre."""
    return (4 * math.pi / wavelength) * (
        constants.thermo_optic_coefficient
        + constants.group_index * constants.thermal_expansion_coefficient
    )


@dataclass(frozen=True)
class ValidatedConfig:
    """Linear SI view of a :class:`SystemConfig` whose invariants hold."""

    source: SystemConfig
    constants: PhysicalConstants
    wavelength: float
    pulse_rate: float
    pulse_duration: float
    booster_gain: float
    booster_nf: float
    launch_peak_power: float
    fiber_length: float
    attenuation_alpha: float  # field amplitude, 1/m
    scatterers_per_cell: int
    backscatter_capture: float
    circulator_transmission: float
    preamp_gain: float
    preamp_nf: float
    lo_power: float
    bandwidth: float
    adc_rate: float
    filter_taps_n: int
    thermal_psd: float
    fade_fraction: float
    heating_zone: tuple[float, float]
    heating_rate: float
    cf: float
    reference_distance: float
    monitor_distance: float
    reference_search: float
    frames: int
    rng_seed: int

    @property
    def photon_energy(self) -> float:
        return self.constants.planck_constant * self.constants.speed_of_light / self.wavelength


def _require(cond: bool, invariant: str, message: str) -> None:
    if not cond:
        raise ConfigError(invariant, message)


def validate(config: SystemConfig) -> ValidatedConfig:
    """Check every invariant and convert boundary units to linear SI."""
    c = config
    constants = c.constants
    for name in ("wavelength_m", "pulse_rate_hz", "pulse_duration_s", "fiber_length_m",
                 "receiver_bandwidth_hz", "adc_rate_hz"):
        _require(getattr(c, name) > 0, "positive-" + name.replace("_", "-"),
                 f"{name} must be > 0 (got {getattr(c, name)!r})")
    _require(c.attenuation_db_per_km >= 0, "attenuation", "attenuation must be >= 0")
    _require(c.pulse_duration_s * c.pulse_rate_hz < 1, "pulse-duty-cycle",
             "pulse_duration * pulse_rate must be < 1")
    _require(c.adc_rate_hz > c.receiver_bandwidth_hz, "adc-rate",
             "adc_rate_hz must exceed receiver_bandwidth_hz")
    _require(c.scatterers_per_cell >= 1, "scatterer-count", "scatterers_per_cell must be >= 1")
    _require(c.filter_taps_n >= 1 and c.filter_taps_n % 2 == 1, "filter-taps",
             "filter_taps_n must be a positive odd integer")
    _require(c.thermal_psd >= 0, "thermal-psd", "thermal_psd must be >= 0")
    _require(0 <= c.fade_fraction < 1, "fade-fraction", "fade_fraction must lie in [0, 1)")
    _require(c.frames >= 1, "frames", "frames must be >= 1")
    _require(c.fibers >= 1, "fibers", "fibers must be >= 1")
    _require(c.noise_scale >= 0, "noise-scale", "noise_scale must be >= 0")

    round_trip = 2 * c.fiber_length_m * c.group_index / constants.speed_of_light
    if not c.logical_slow_time:
        _require(1.0 / c.pulse_rate_hz >= round_trip, "pulse-overlap",
                 f"frame period {1e6 / c.pulse_rate_hz:.4g} us is shorter than the "
                 f"round trip {round_trip * 1e6:.4g} us (more than one pulse in flight)")

    z0, z1 = c.heating_zone_start_m, c.heating_zone_end_m
    _require(0 <= z0 < z1 <= c.fiber_length_m, "heating-zone",
             "need 0 <= heating_zone_start_m < heating_zone_end_m <= fiber_length_m")
    _require(not (z0 <= c.reference_distance_m <= z1), "reference-outside-zone",
             "reference_distance_m must lie outside the heating zone")
    _require(c.reference_distance_m < z0, "reference-before-zone",
             "reference_distance_m must precede the heating zone")
    _require(z0 < c.monitor_distance_m <= c.fiber_length_m, "monitor-after-zone-start",
             "monitor_distance_m must lie beyond heating_zone_start_m")
    _require(c.reference_search_m >= 0, "reference-search", "reference_search_m must be >= 0")

    cf = c.conversion_constant_cf
    if cf is None:
        cf = cf_from_constants(c.wavelength_m, constants)
    _require(cf > 0, "conversion-constant", "conversion_constant_cf must be > 0")

    return ValidatedConfig(
        source=c,
        constants=constants,
        wavelength=c.wavelength_m,
        pulse_rate=c.pulse_rate_hz,
        pulse_duration=c.pulse_duration_s,
        booster_gain=float(db_to_linear(c.booster_gain_db)),
        booster_nf=float(db_to_linear(c.booster_nf_db)),
        launch_peak_power=float(dbm_to_watts(c.launch_peak_power_dbm)),
        fiber_length=c.fiber_length_m,
        attenuation_alpha=db_per_km_to_field_alpha(c.attenuation_db_per_km),
        scatterers_per_cell=int(c.scatterers_per_cell),
        backscatter_capture=float(db_to_linear(c.backscatter_capture_db_per_cell)),
        circulator_transmission=float(db_to_linear(-c.circulator_loss_db)),
        preamp_gain=float(db_to_linear(c.preamp_gain_db)),
        preamp_nf=float(db_to_linear(c.preamp_nf_db)),
        lo_power=float(dbm_to_watts(c.lo_power_dbm)),
        bandwidth=c.receiver_bandwidth_hz,
        adc_rate=c.adc_rate_hz,
        filter_taps_n=int(c.filter_taps_n),
        thermal_psd=c.thermal_psd,
        fade_fraction=c.fade_fraction,
        heating_zone=(z0, z1),
        heating_rate=c.heating_rate_k_per_frame,
        cf=float(cf),
        reference_distance=c.reference_distance_m,
        monitor_distance=c.monitor_distance_m,
        reference_search=c.reference_search_m,
        frames=int(c.frames),
        rng_seed=int(c.rng_seed),
    )


@dataclass(frozen=True)
class DerivedGrid:
    """Fast-time sampling grid; sample ``k`` sits at ``k * v_g / (2 F_s)``."""

    sample_period: float
    total_fast_samples: int
    group_velocity: float
    resolution_cell_length: float

    @property
    def sample_spacing(self) -> float:
        return self.group_velocity * self.sample_period / 2

    def distance_of_sample(self, k):
        return np.asarray(k) * self.sample_spacing if np.ndim(k) else k * self.sample_spacing

    def index_of_distance(self, z: float) -> int:
        return int(round(z / self.sample_spacing))


def derive_grid(config: ValidatedConfig) -> DerivedGrid:
    vg = config.constants.group_velocity
    return DerivedGrid(
        sample_period=1.0 / config.adc_rate,
        total_fast_samples=int(math.floor(2 * config.fiber_length * config.adc_rate / vg)),
        group_velocity=vg,
        resolution_cell_length=vg * config.pulse_duration / 2,
    )


# --- config files -----------------------------------------------------------

_FIELD_DEFAULTS = {f.name: f.default for f in fields(SystemConfig)}


def _parse_grid(text: str, cast=float) -> tuple:
    text = text.strip().strip("()[]")
    if not text:
        return ()
    if ":" in text:
        start, stop, step = (float(v) for v in text.split(":"))
        if step <= 0:
            raise ValueError("range step must be > 0")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return tuple(cast(round(start + i * step, 12)) for i in range(n))
    return tuple(cast(v) for v in text.replace(";", ",").split(",") if v.strip())


# accepted alternative spellings of keys
ALIASES = {
    "delta_L_list": "delta_l_list",
    "seed": "rng_seed",
    "cf": "conversion_constant_cf",
    "fiber_length": "fiber_length_m",
    "fade_threshold": "fade_fraction",
}


def canonical_key(key: str) -> str:
    return ALIASES.get(key, key)


def coerce_value(key: str, text: Any):
    """Convert a raw string (or already-typed value) to the type of ``key``."""
    key = canonical_key(key)
    if key not in _FIELD_DEFAULTS:
        raise ConfigError("unknown-key", f"unknown configuration key {key!r}")
    if not isinstance(text, str):
        return text
    default = _FIELD_DEFAULTS[key]
    raw = text.strip()
    try:
        if key == "conversion_constant_cf":
            return None if raw.lower() in ("", "none", "auto") else float(raw)
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(float(raw)) if float(raw).is_integer() else int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return _parse_grid(raw, int if key == "frames_grid" else float)
        return raw
    except ValueError as exc:
        raise ConfigError("bad-value", f"cannot parse {key} = {text!r}") from exc


def apply_overrides(config: SystemConfig, overrides: Mapping[str, Any]) -> SystemConfig:
    return config.replace(**{canonical_key(k): coerce_value(k, v) for k, v in overrides.items()})


def parse_assignments(items: Iterable[str]) -> dict[str, str]:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError("bad-override", f"expected key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path: str | Path, base: SystemConfig | None = None) -> SystemConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    values = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError("unknown-section", f"unknown section [{section}] in {path}")
        for key, value in parser.items(section):
            key = canonical_key(key)
            if key not in SECTIONS[section]:
                raise ConfigError("unknown-key", f"key {key!r} does not belong in [{section}]")
            values[key] = value
    return apply_overrides(base or SystemConfig(), values)


def _format_value(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def dump_config(config: SystemConfig) -> str:
    lines = []
    for section, keys in SECTIONS.items():
        lines.append(f"[{section}]")
        lines.extend(f"{key} = {_format_value(getattr(config, key))}" for key in keys)
        lines.append("")
    return "\n".join(lines)
