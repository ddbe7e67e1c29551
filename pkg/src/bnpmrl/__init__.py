"""Bayesian nonparametric mean residual life regression."""

__version__ = "0.1.0"
