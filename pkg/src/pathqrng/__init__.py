"""Simulation and post-processing for a path-entangled multi-bit quantum random number generator."""

__version__ = "0.1.0"
