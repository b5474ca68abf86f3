"""Regression multiple-instance learning for continuous biomarker scores."""

__version__ = "0.1.0"
