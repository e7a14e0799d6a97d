"""Egocentric 3D hand-pose forecasting at desk scale."""

__version__ = "0.1.0"
