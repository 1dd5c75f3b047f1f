"""Embedding-space augmentation for multiple-instance learning, in plain numpy."""

__version__ = "0.1.0"
