"""Pointing-target estimation from 2D hand landmarks and object centroids."""

__version__ = "0.1.0"
