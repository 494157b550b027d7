"""Compound-word music transformer with linear attention and nucleus sampling."""

__version__ = "0.1.0"
