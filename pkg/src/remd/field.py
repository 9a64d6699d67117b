"""Grid and field primitives.

Values are float64 arrays of shape ``(ny, nx)``; C order gives the flat
index ``j * nx + i`` used by the binary file format.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GridMismatchError(ValueError):
    """Two fields that must share a grid do not."""


@dataclass(frozen=True)
class Grid2D:
    nx: int
    ny: int
    dx: float = 1.0
    dy: float = 1.0
    periodic_x: bool = True
    periodic_y: bool = True

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"grid must be at least 2x2, got {self.nx}x{self.ny}")
        if not (self.dx > 0 and self.dy > 0):
            raise ValueError("grid spacing must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def periodic(self) -> bool:
        return self.periodic_x and self.periodic_y

    def coarsen(self, factor: int = 2) -> Grid2D:
        if self.nx % factor or self.ny % factor:
            raise ValueError(f"{self.nx}x{self.ny} grid is not divisible by {factor}")
        return Grid2D(self.nx // factor, self.ny // factor, self.dx * factor,
                      self.dy * factor, self.periodic_x, self.periodic_y)

    def refine(self, factor: int = 2) -> Grid2D:
        return Grid2D(self.nx * factor, self.ny * factor, self.dx / factor,
                      self.dy / factor, self.periodic_x, self.periodic_y)

    def divisible_by(self, m: int) -> bool:
        return self.nx % m == 0 and self.ny % m == 0


class ScalarField:
    """A real scalar field on a :class:`Grid2D`."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid2D, values):
        arr = np.array(values, dtype=np.float64)
        if arr.size != grid.size:
            raise ValueError(f"expected {grid.size} values for {grid.nx}x{grid.ny} grid, "
                             f"got {arr.size}")
        arr = arr.reshape(grid.shape)
        if not np.all(np.isfinite(arr)):
            raise ValueError("field values must be finite")
        arr.flags.writeable = False
        self.grid = grid
        self.values = arr

    @classmethod
    def like(cls, other: ScalarField, values) -> ScalarField:
        return cls(other.grid, values)

    def __repr__(self):
        return f"ScalarField({self.grid.nx}x{self.grid.ny})"

    def __eq__(self, other):
        if not isinstance(other, ScalarField):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.values, other.values)

    __hash__ = None

    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


@dataclass(frozen=True)
class VectorField2D:
    u: ScalarField
    v: ScalarField

    def __post_init__(self):
        check_same_grid(self.u, self.v)

    @property
    def grid(self) -> Grid2D:
        return self.u.grid


class FluidMask:
    """Binary mask, 1 marks fluid cells."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid2D, values):
        arr = np.array(values, dtype=np.float64).reshape(grid.shape)
        if not np.all((arr == 0) | (arr == 1)):
            raise ValueError("mask entries must be 0 or 1")
        arr.flags.writeable = False
        self.grid = grid
        self.values = arr


def check_same_grid(*fields) -> Grid2D:
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise GridMismatchError(f"grid mismatch: {grid} vs {f.grid}")
    return grid


def field_fill(grid: Grid2D, c: float) -> ScalarField:
    return ScalarField(grid, np.full(grid.shape, float(c)))


def field_axpy(a: float, x: ScalarField, y: ScalarField) -> ScalarField:
    """Return ``a * x + y``."""
    grid = check_same_grid(x, y)
    return ScalarField(grid, a * x.values + y.values)


def field_norms(x: ScalarField) -> tuple[float, float, float]:
    """Root-mean-square, max-abs and mean of a field."""
    v = x.values
    linf = float(np.max(np.abs(v)))
    # scale by the max so tiny fields do not underflow to a zero norm
    rms = linf * float(np.sqrt(np.mean((v / linf) ** 2))) if linf > 0 else 0.0
    return (rms, linf, float(np.mean(v)))


def apply_mask(x: ScalarField, m: FluidMask) -> ScalarField:
    grid = check_same_grid(x, m)
    return ScalarField(grid, x.values * m.values)
