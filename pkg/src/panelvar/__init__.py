"""Bayesian partially pooled panel vector autoregression."""

__version__ = "0.1.0"
