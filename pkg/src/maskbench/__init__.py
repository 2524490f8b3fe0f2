"""Mask-estimation head comparison toolkit for masking-based source separation."""

__version__ = "0.1.0"
