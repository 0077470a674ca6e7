"""Worldline Monte Carlo for Casimir and Casimir-Polder energies and their derivatives."""

__version__ = "0.1.0"
