"""Synthetic labeled LiDAR range images of walking humans."""

__version__ = "0.1.0"
