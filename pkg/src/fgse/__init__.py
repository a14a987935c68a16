"""Streaming manipulation-action recognition from 3D scene-graph sequences."""

__version__ = "0.1.0"
