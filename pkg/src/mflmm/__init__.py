"""Mean-field LIBOR market model: particle simulation, pricing, calibration, diagnostics."""
from .kernels import BACKEND, available_backends

__version__ = "0.1.0"

__all__ = ["BACKEND", "available_backends", "__version__"]
