"""Fuzzy set-membership filtering with ellipsoid-based attack detection."""

__version__ = "0.1.0"
