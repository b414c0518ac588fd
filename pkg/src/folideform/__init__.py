"""Spectral exterior calculus for codimension-one foliations on flat tori."""

__version__ = "0.1.0"
