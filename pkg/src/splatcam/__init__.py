"""Photogenic camera trajectories through language-grounded Gaussian splat scenes."""
__version__ = "0.1.0"
