"""Numerics of the Schroedinger operator L = -Laplace + V on a box"""

__version__ = "1.0.0"
