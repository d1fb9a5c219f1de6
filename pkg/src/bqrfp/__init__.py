"""Bayesian quantile regression with fractional-polynomial bases and variable selection."""

__version__ = "0.1.0"
