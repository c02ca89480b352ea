"""Stacking ensembles and mixed-model benchmark analysis for spectral data."""

__version__ = "0.1.0"
