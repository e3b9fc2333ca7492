"""Predict CI build errors from configuration code, with line-level explanations."""

__version__ = "0.1.0"
