"""Similarity-aware contrastive losses for noisy image-text alignment."""

__version__ = "0.1.0"
