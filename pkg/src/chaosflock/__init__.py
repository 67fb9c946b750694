"""Stochastic flocking with vision constraints: particles, mean-field limit and chaos checks."""

__version__ = "0.1.0"
