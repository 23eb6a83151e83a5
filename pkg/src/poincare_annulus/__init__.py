"""Poincare annulus construction for a two-predator, one-prey system."""

__version__ = "0.1.0"
