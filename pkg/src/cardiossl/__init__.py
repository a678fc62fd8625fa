"""Self-supervised cardiac MR segmentation via anatomical-position prediction."""

__version__ = "0.1.0"
