"""vizflow: co-evolving synthesis, calibration, and evaluation for interactive visual-reasoning data."""

__version__ = "0.1.0"
