"""qeforge: desk-scale predictor-estimator toolkit for MT quality estimation."""

__version__ = "0.1.0"
