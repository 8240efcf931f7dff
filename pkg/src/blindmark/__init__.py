"""Blind in-generation video watermarking with frame-wise pseudorandom codes."""

__version__ = "0.1.0"
