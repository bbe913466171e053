"""Spike variations and homogenization for parabolic control problems."""

__version__ = "0.1.0"
