"""Regularized isogeometric Galerkin solver for singular multipatch maps."""

__version__ = "0.1.0"
