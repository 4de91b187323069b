"""Desk-scale speculative decoding engine for generative list-wise recommendation."""

__version__ = "0.1.0"
