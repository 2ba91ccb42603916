"""Ricci soliton stability toolkit for rotationally invariant metrics."""

__version__ = "0.1.0"
