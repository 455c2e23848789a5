"""Temporal embeddings of per-tile mobility activity."""

__version__ = "0.1.0"
