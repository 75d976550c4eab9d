"""Numerical laboratory for type II blow-up of the 5-d energy-critical heat equation."""

__version__ = "0.1.0"
