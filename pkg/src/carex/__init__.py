"""Causal ECG reasoning pipeline."""

__version__ = "0.1.0"
