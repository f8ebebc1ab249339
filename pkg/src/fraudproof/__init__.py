"""Verifiable graph computation with two-phase dispute resolution."""

__version__ = "0.1.0"
