"""Residual-multigrid diffusion for few-step super-resolution of 2D fluid fields."""

from remd.field import FluidMask, Grid2D, ScalarField, VectorField2D

__all__ = ["FluidMask", "Grid2D", "ScalarField", "VectorField2D"]
__version__ = "0.1.0"
