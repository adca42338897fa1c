"""Articulatory-to-acoustic mapping from vocal-tract MRI frames."""

__version__ = "0.1.0"
