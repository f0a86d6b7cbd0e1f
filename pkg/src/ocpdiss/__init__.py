"""Turnpike and dissipativity analysis for continuous-time optimal control problems."""

__version__ = "0.1.0"
