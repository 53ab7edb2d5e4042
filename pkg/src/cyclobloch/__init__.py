"""Charged particle on a square lattice in crossed magnetic and electric fields:
spectra, strong-field perturbation theory, classical dynamics, transporting
states and wave-packet propagation."""

from .model import (
    GOLDEN,
    Gauge,
    Irrational,
    ModelConfig,
    Rational,
    derive_scales,
    irrational_config,
    rational_config,
    validate,
)

__all__ = [
    "GOLDEN",
    "Gauge",
    "Irrational",
    "ModelConfig",
    "Rational",
    "derive_scales",
    "irrational_config",
    "rational_config",
    "validate",
]
__version__ = "0.1.0"
