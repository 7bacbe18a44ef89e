"""Numerical laboratory for Schrodinger operators with Kato-class potentials on R^3."""

__version__ = "0.1.0"
