"""Constrained optimization with quadratic g-expectations on a binary path tree."""

__version__ = "0.1.0"
