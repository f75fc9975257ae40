"""Saccadic spike self-attention: spiking neurons, attention variants, training and analysis."""

__version__ = "0.1.0"

from .ops import EnergyReport, OpCounter, energy_estimate
from .tensor import DomainError, RngState, ShapeError

__all__ = ["DomainError", "EnergyReport", "OpCounter", "RngState", "ShapeError", "energy_estimate", "__version__"]
