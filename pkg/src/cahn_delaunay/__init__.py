"""Delaunay unduloids, axisymmetric periodic Cahn-Hilliard solutions and their Bloch spectra."""

__version__ = "0.1.0"
