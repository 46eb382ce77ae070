"""Disentangled direction discovery by contrast in the Variation Space."""

__version__ = "0.1.0"
