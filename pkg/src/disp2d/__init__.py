"""Numerical toolkit for dispersive estimates of 2D Schroedinger operators."""
__version__ = "0.1.0"
