"""Continual low-rank adaptation with spectrally balanced, gradient-orthogonal updates."""

__version__ = "0.1.0"
