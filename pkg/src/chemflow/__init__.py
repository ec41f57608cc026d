"""Pseudo-spectral chemotaxis-fluid simulator with a priori estimate auditing."""

__version__ = "0.1.0"
