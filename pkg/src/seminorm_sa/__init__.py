"""Seminorm fixed-point methods and Markovian stochastic approximation."""
__version__ = "0.1.0"
