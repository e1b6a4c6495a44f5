"""Numerical laboratory for metric sequences on manifolds with boundary."""

__version__ = "0.1.0"
