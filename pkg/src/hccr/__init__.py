"""Handwritten Chinese character recognition with direction-decomposed feature maps."""

__version__ = "0.1.0"
