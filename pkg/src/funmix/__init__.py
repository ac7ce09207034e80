"""Bayesian functional mixed membership models."""

__version__ = "0.1.0"
