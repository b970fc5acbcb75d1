"""Residual-distribution learning and risk-informed barrier safety filtering."""

__version__ = "0.1.0"
