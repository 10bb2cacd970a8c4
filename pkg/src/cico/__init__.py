"""Clip-in clip-out video instance segmentation engine."""

__version__ = "0.1.0"
