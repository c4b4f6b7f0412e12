"""Retinal cyst detection and segmentation in SD-OCT volumes."""

__version__ = "0.1.0"
