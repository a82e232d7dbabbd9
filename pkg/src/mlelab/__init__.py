"""Numerical laboratory for the normal approximation of one-parameter maximum likelihood estimators."""

__version__ = "0.1.0"
