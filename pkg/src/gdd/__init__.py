"""Generalized dual decomposition for two-stage stochastic mixed-integer programs."""

__version__ = "0.1.0"
