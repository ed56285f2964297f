"""Gaussian cylindrical measures, their supports, and the Langevin and
path-integral systems built on them, each checked against an independent
brute-force oracle."""

__version__ = "0.1.0"
