"""Nudging velocity and pressure observations into incompressible flow with Taylor-Hood elements."""

__version__ = "0.1.0"
