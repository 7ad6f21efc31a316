"""Desk-scale transformer pre-training lab for studying weight-variance control."""

__version__ = "0.1.0"
