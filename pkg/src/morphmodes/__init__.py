"""Eigenmode classification by shape morphing and eigenpair tracking."""

__version__ = "0.1.0"
