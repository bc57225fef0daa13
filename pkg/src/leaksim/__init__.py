"""Leakage-aware surface-code simulation toolkit."""

__version__ = "0.1.0"
