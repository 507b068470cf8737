"""Numerical laboratory for partial Neumann-to-Dirichlet data and boundary Carleman estimates."""

__version__ = "0.1.0"
