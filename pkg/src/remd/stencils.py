"""Second-order finite-difference operators.

Periodic axes wrap; non-periodic axes use symmetric (zero-flux) ghost
cells, which is the ``reflect`` boundary mode.
"""

from __future__ import annotations

import numpy as np

from remd.field import Grid2D, ScalarField, VectorField2D, check_same_grid

BOUNDARIES = ("periodic", "reflect")


def shift(a, offset, axis, periodic):
    """Value at index ``i + offset`` along ``axis``."""
    if periodic:
        return np.roll(a, -offset, axis=axis)
    n = a.shape[axis]
    idx = np.clip(np.arange(n) + offset, 0, n - 1)
    return np.take(a, idx, axis=axis)


def ddx(a, dx, periodic=True):
    return (shift(a, 1, -1, periodic) - shift(a, -1, -1, periodic)) / (2 * dx)


def ddy(a, dy, periodic=True):
    return (shift(a, 1, -2, periodic) - shift(a, -1, -2, periodic)) / (2 * dy)


def lap(a, dx=1.0, dy=1.0, periodic_x=True, periodic_y=True):
    """Five-point Laplacian (two-term form for dx != dy)."""
    lx = shift(a, 1, -1, periodic_x) - 2 * a + shift(a, -1, -1, periodic_x)
    ly = shift(a, 1, -2, periodic_y) - 2 * a + shift(a, -1, -2, periodic_y)
    return lx / dx**2 + ly / dy**2


def lap_grid(a, grid: Grid2D):
    return lap(a, grid.dx, grid.dy, grid.periodic_x, grid.periodic_y)


def gradient(x: ScalarField) -> VectorField2D:
    g = x.grid
    return VectorField2D(ScalarField(g, ddx(x.values, g.dx, g.periodic_x)),
                         ScalarField(g, ddy(x.values, g.dy, g.periodic_y)))


def divergence(w: VectorField2D) -> ScalarField:
    g = check_same_grid(w.u, w.v)
    return ScalarField(g, ddx(w.u.values, g.dx, g.periodic_x)
                       + ddy(w.v.values, g.dy, g.periodic_y))


def laplacian(x: ScalarField) -> ScalarField:
    return ScalarField(x.grid, lap_grid(x.values, x.grid))


def biharmonic(x: ScalarField) -> ScalarField:
    """Laplacian composed with itself, sharing its boundary rule."""
    return ScalarField(x.grid, lap_grid(lap_grid(x.values, x.grid), x.grid))


def vorticity(w: VectorField2D) -> ScalarField:
    g = check_same_grid(w.u, w.v)
    return ScalarField(g, ddx(w.v.values, g.dx, g.periodic_x)
                       - ddy(w.u.values, g.dy, g.periodic_y))


def with_boundary(grid: Grid2D, boundary: str) -> Grid2D:
    """Copy of ``grid`` with both axes set to ``boundary``."""
    if boundary not in BOUNDARIES:
        raise ValueError(f"boundary must be one of {BOUNDARIES}, got {boundary!r}")
    p = boundary == "periodic"
    return Grid2D(grid.nx, grid.ny, grid.dx, grid.dy, p, p)
