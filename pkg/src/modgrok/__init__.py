"""Grokking modular arithmetic with a two-layer MLP."""

__version__ = "0.1.0"
