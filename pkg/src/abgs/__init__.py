"""Adaptive background grid simplification for mesh sizing fields."""

__version__ = "0.1.0"
