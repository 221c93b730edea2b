"""Synthetic 4-D mmWave radar point clouds: echo simulation, imaging, detection and clustering."""

__version__ = "0.1.0"
