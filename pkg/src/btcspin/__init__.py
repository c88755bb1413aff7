"""Boundary-time-crystal simulations of p,q collective spin models."""

__version__ = "0.1.0"
