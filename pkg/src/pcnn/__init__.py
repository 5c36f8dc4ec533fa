"""Photonic convolutional neural networks built on star-coupler Fourier transforms."""

__version__ = "0.1.0"
