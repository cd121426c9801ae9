"""Local mild solutions of the Hardy-Henon heat equation driven by cylindrical fBm."""

__version__ = "0.1.0"
