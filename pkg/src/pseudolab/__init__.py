"""Semi-supervised pseudo-labeling pipeline for sentence-complexity regression."""

__version__ = "0.1.0"
