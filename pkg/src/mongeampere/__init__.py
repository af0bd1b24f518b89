"""Discretizations and solvers for the Dirichlet Monge-Ampere problem det D²u = f."""

__version__ = "0.1.0"
