"""Multipath BGP deployment inference and border-link performance analysis."""

__version__ = "0.1.0"
