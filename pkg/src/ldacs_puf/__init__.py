"""Simulation lab for PUF-based aircraft authentication and the attacks on it."""

__version__ = "0.1.0"
