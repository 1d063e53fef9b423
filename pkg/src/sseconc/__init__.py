"""Thermal spin correlators by stochastic series expansion, and the pairwise
entanglement measures built from them."""

__version__ = "0.1.0"
