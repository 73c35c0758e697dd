"""Mesh-free neural solver for pulsatile flow in deformable axisymmetric vessels."""

__version__ = "0.1.0"
