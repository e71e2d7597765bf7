"""Variation-aware chip thermal simulation with modified Green's functions."""

__version__ = "0.1.0"
