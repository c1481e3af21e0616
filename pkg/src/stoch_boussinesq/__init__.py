"""Pseudo-spectral simulation of the stochastic Boussinesq system with transport noise."""

from .spectral import Grid

__all__ = ["Grid"]
__version__ = "0.1.0"
