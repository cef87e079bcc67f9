"""Barley kernel tracking pipeline for line-scan RGB and NIR-HSI imaging."""

__version__ = "0.1.0"
