"""Hierarchical multi-spectral HAR pipeline for memory-constrained inference."""

__version__ = "0.1.0"
