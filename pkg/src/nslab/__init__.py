"""Spectral Navier-Stokes laboratory with Littlewood-Paley criterion diagnostics."""

__version__ = "0.1.0"
