"""Residual-in-residual dense block super-resolution: networks, losses, training and evaluation."""

__version__ = "0.1.0"
