"""cgcsurf -- constant Gaussian curvature surfaces from loop-group potentials."""

__version__ = "1.0.0"
