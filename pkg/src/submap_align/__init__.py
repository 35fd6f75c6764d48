"""Align independently predicted 3D submaps into one consistent trajectory and point cloud."""

__version__ = "0.1.0"
