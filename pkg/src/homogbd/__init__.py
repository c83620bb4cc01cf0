"""Homogenization of oscillating Dirichlet data for fully nonlinear parabolic equations on moving domains."""

__version__ = "0.1.0"
