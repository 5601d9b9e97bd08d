"""Soybean plot yield estimation from ground-robot video frames."""
__version__ = "0.1.0"
