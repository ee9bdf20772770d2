"""Video action classification from RGB frames and dense optical flow."""

__version__ = "0.1.0"
