"""Fingerprint liveness detection from image quality measures."""

__version__ = "0.1.0"
