"""Numerical laboratory for Hill's equation with random periodic potentials."""
__version__ = "0.1.0"
