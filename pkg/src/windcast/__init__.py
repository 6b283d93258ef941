"""Decomposition-driven short-term wind-speed forecasting."""

__version__ = "0.1.0"
