"""Orientation-prior transformer super-resolution for radiograph-like images."""

__version__ = "0.1.0"
