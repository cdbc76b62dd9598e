"""Vectorized-scene trajectory forecasting with scene-level uncertainty."""

__version__ = "0.1.0"
