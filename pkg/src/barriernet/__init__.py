"""Barrier-label stock classification, confidence thresholding and backtesting."""

__version__ = "0.1.0"
