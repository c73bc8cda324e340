"""Quantum-noise-limited phase and temperature-change estimation for coherent phi-OTDR."""

__version__ = "0.1.0"

from .config import (ConfigError, DerivedGrid, PhysicalConstants, SystemConfig, ValidatedConfig,
                     derive_grid, validate)
from .estimation import PhaseTracker
from .limits import averaged_limit, limit_curve, phase_limit, temperature_limit

__all__ = [
    "ConfigError", "DerivedGrid", "PhaseTracker", "PhysicalConstants", "SystemConfig",
    "ValidatedConfig", "averaged_limit", "derive_grid", "limit_curve", "phase_limit",
    "temperature_limit", "validate",
]
