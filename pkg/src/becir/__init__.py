"""Bit-level soft-error analysis for a small register-machine IR."""

__version__ = "0.1.0"
