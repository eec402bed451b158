"""Discrete causal graphical models for retrofit-effect estimation."""

__version__ = "0.1.0"
