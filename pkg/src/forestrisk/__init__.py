"""Optimal thinning and rotation of an even-aged stand under destructive-event risk."""

__version__ = "0.1.0"
