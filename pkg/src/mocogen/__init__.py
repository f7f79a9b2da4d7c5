"""Coupled 3D-motion / video flow-matching generation at desk scale."""

__version__ = "0.1.0"
