"""Numerical laboratory for Robin perforations that approximate Schrödinger potentials."""

__version__ = "0.1.0"
