"""Scalar waves at the junction of two open dielectric waveguides."""

__version__ = "0.1.0"
