"""Synthetic fields and the RMD1 binary field format."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from remd import rng as rng_mod
from remd.field import Grid2D, ScalarField, VectorField2D
from remd.spectral import wavenumber_magnitude

FIELD_MAGIC = b"RMD1"
FIELD_VERSION = 1
_HEADER = struct.Struct("<4sIIIIddB")


class FieldFileError(ValueError):
    """Malformed or unreadable RMD1 file."""


def gen_grf(grid: Grid2D, slope: float = -5 / 3, seed: int = 0) -> ScalarField:
    """Gaussian random field whose per-mode power scales as ``|k|**slope``.

    The result is normalised to zero mean and unit variance.
    """
    if not grid.periodic:
        raise ValueError("random fields are generated on periodic grids")
    g = rng_mod.generator(seed, "grf")
    noise = g.standard_normal(grid.shape)
    k = wavenumber_magnitude(grid.ny, grid.nx)
    amp = np.zeros_like(k)
    amp[k > 0] = k[k > 0] ** (slope / 2)
    f = np.fft.ifft2(np.fft.fft2(noise) * amp).real
    f -= f.mean()
    f /= f.std()
    return ScalarField(grid, f)


def cell_centres(grid: Grid2D):
    """Cell-centre coordinates as fractions of the domain length."""
    x = (np.arange(grid.nx) + 0.5) / grid.nx
    y = (np.arange(grid.ny) + 0.5) / grid.ny
    return np.meshgrid(x, y)


def gen_taylor_green(grid: Grid2D, amplitude: float = 1.0) -> VectorField2D:
    x, y = cell_centres(grid)
    u = amplitude * np.cos(2 * np.pi * x) * np.sin(2 * np.pi * y)
    v = -amplitude * np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y)
    return VectorField2D(ScalarField(grid, u), ScalarField(grid, v))


def make_dataset(n: int, grid: Grid2D, slope: float = -5 / 3, seed: int = 0) -> list[ScalarField]:
    return [gen_grf(grid, slope, rng_mod.derive_seed(seed, f"field-{i}")) for i in range(n)]


def _boundary_flag(grid: Grid2D) -> int:
    return (0 if grid.periodic_x else 1) | (0 if grid.periodic_y else 2)


def write_field(path, fields) -> None:
    """Write one or more same-grid fields as channels of an RMD1 file."""
    if isinstance(fields, ScalarField):
        fields = [fields]
    if not fields:
        raise ValueError("nothing to write")
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise ValueError("all channels must share a grid")
    header = _HEADER.pack(FIELD_MAGIC, FIELD_VERSION, grid.nx, grid.ny, len(fields),
                          grid.dx, grid.dy, _boundary_flag(grid))
    payload = b"".join(f.values.astype("<f8").tobytes() for f in fields)
    Path(path).write_bytes(header + payload)


def read_field(path) -> list[ScalarField]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FieldFileError(f"{path}: {exc.strerror or exc}") from exc
    if len(data) < _HEADER.size:
        raise FieldFileError(f"{path}: truncated header ({len(data)} bytes)")
    magic, version, nx, ny, channels, dx, dy, flag = _HEADER.unpack_from(data)
    if magic != FIELD_MAGIC:
        raise FieldFileError(f"{path}: bad magic {magic!r}, expected {FIELD_MAGIC!r}")
    if version != FIELD_VERSION:
        raise FieldFileError(f"{path}: unsupported version {version}")
    expected = channels * nx * ny * 8
    actual = len(data) - _HEADER.size
    if actual != expected:
        raise FieldFileError(f"{path}: payload is {actual} bytes, expected {expected} "
                             f"({channels} channel(s) of {nx}x{ny} float64)")
    grid = Grid2D(nx, ny, dx, dy, not flag & 1, not flag & 2)
    arr = np.frombuffer(data, "<f8", offset=_HEADER.size).reshape(channels, ny, nx)
    return [ScalarField(grid, a) for a in arr]
