"""Approximate message passing with automatic threshold tuning."""

__version__ = "0.1.0"
