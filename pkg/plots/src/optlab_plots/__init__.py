"""Offline renderer turning optlab run directories into figures."""

__version__ = "0.1.0"
