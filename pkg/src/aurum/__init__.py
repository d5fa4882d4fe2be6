"""aurum: a seedable Monte Carlo simulator and measurement toolkit for
exchange economies with thermodynamic observables (temperature, entropy,
prices, values, response matrices)."""

from .engine import BACKEND as ENGINE_BACKEND

__version__ = "0.1.0"

__all__ = ["ENGINE_BACKEND", "__version__"]
