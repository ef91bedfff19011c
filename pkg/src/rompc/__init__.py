"""Reduced-order model predictive control with LP-based error bounds."""

__version__ = "0.1.0"
