"""Temporal structure kit: learned temporal pooling heads over per-frame features."""

__version__ = "0.1.0"
