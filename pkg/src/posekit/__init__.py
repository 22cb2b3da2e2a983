"""Monocular spacecraft pose estimation with soft-classified orientation."""

__version__ = "0.1.0"
