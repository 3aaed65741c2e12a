"""Hypercomplex graph networks with learnable multiplication rules."""

__version__ = "0.1.0"
