"""Inter-resolution transfers.

Two families live here:

* data-space averaging restriction (``restrict_avg``) and bilinear
  prolongation, used to build LR inputs and the baseline;
* orthonormal wavelet restriction ``R = H_y (x) H_x`` (stride-2 low-pass
  filtering along each axis) and its exact transpose ``P = R^T``, used
  inside the multigrid corrector.

All array kernels act on the trailing ``(ny, nx)`` axes and wrap
periodically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from remd.field import Grid2D, ScalarField

_SQ2 = np.sqrt(2.0)
_SQ3 = np.sqrt(3.0)


@dataclass(frozen=True)
class WaveletFilterBank:
    name: str
    h: tuple[float, ...]
    g: tuple[float, ...]
    orthonormal: bool = True

    @property
    def lowpass(self) -> np.ndarray:
        return np.asarray(self.h)


def _qmf(h):
    n = len(h)
    return tuple((-1) ** k * h[n - 1 - k] for k in range(n))


def haar() -> WaveletFilterBank:
    h = (1 / _SQ2, 1 / _SQ2)
    return WaveletFilterBank("haar", h, (1 / _SQ2, -1 / _SQ2))


def db2() -> WaveletFilterBank:
    h = tuple(c / (4 * _SQ2) for c in (1 + _SQ3, 3 + _SQ3, 3 - _SQ3, 1 - _SQ3))
    return WaveletFilterBank("db2", h, _qmf(h))


FILTER_BANKS = {"haar": haar, "db2": db2}


def get_filterbank(name: str) -> WaveletFilterBank:
    try:
        return FILTER_BANKS[name]()
    except KeyError:
        raise ValueError(f"unknown wavelet {name!r}; choose one of {sorted(FILTER_BANKS)}") from None


def _check_even(shape):
    ny, nx = shape[-2:]
    if nx % 2 or ny % 2:
        raise ValueError(f"cannot coarsen odd dimensions {nx}x{ny}")


# ---------------------------------------------------------------- array kernels

def avg_down(a: np.ndarray) -> np.ndarray:
    """Mean over each 2x2 block."""
    _check_even(a.shape)
    return 0.25 * (a[..., 0::2, 0::2] + a[..., 0::2, 1::2]
                   + a[..., 1::2, 0::2] + a[..., 1::2, 1::2])


def _bilinear_axis(a, axis, periodic):
    n = a.shape[axis]
    if periodic:
        prev = np.roll(a, 1, axis=axis)
        nxt = np.roll(a, -1, axis=axis)
    else:
        idx = np.arange(n)
        prev = np.take(a, np.maximum(idx - 1, 0), axis=axis)
        nxt = np.take(a, np.minimum(idx + 1, n - 1), axis=axis)
    lo = 0.75 * a + 0.25 * prev
    hi = 0.75 * a + 0.25 * nxt
    out = np.stack([lo, hi], axis=axis + 1 if axis >= 0 else axis)
    shape = list(a.shape)
    shape[axis] = 2 * n
    return out.reshape(shape)


def bilinear_up(a: np.ndarray, periodic_x=True, periodic_y=True) -> np.ndarray:
    """Cell-centred bilinear interpolation onto the 2x finer grid."""
    return _bilinear_axis(_bilinear_axis(a, -1, periodic_x), -2, periodic_y)


def _down_axis(a, h, axis):
    out = 0.0
    for k, c in enumerate(h):
        out = out + c * np.roll(a, -k, axis=axis)
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(0, None, 2)
    return out[tuple(sl)]


def _up_axis(a, h, axis):
    shape = list(a.shape)
    shape[axis] *= 2
    up = np.zeros(shape)
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(0, None, 2)
    up[tuple(sl)] = a
    out = 0.0
    for k, c in enumerate(h):
        out = out + c * np.roll(up, k, axis=axis)
    return out


def wavelet_down(a: np.ndarray, h) -> np.ndarray:
    """Separable stride-2 low-pass filtering, x first then y."""
    _check_even(a.shape)
    return _down_axis(_down_axis(a, h, -1), h, -2)


def wavelet_up(a: np.ndarray, h) -> np.ndarray:
    """Exact transpose of :func:`wavelet_down`."""
    return _up_axis(_up_axis(a, h, -2), h, -1)


def lift(a: np.ndarray, h, levels: int) -> np.ndarray:
    """Wavelet prolongation ``levels`` times, scaled so constants map to themselves.

    Each 2D level of an orthonormal filter spreads a coefficient with
    total weight 1/2 per fine cell, hence the factor 2 per level. With
    Haar this is block replication and ``avg_down(lift(a)) == a``.
    """
    for _ in range(levels):
        a = 2.0 * wavelet_up(a, h)
    return a


def lift_adjoint(a: np.ndarray, h, levels: int) -> np.ndarray:
    for _ in range(levels):
        a = 2.0 * wavelet_down(a, h)
    return a


# ---------------------------------------------------------------- field ops

def restrict_avg(x: ScalarField) -> ScalarField:
    return ScalarField(x.grid.coarsen(2), avg_down(x.values))


def prolong_bilinear(xc: ScalarField, fine_grid: Grid2D) -> ScalarField:
    if (fine_grid.nx, fine_grid.ny) != (2 * xc.grid.nx, 2 * xc.grid.ny):
        raise ValueError(f"fine grid {fine_grid.nx}x{fine_grid.ny} is not twice "
                         f"{xc.grid.nx}x{xc.grid.ny}")
    return ScalarField(fine_grid, bilinear_up(xc.values, fine_grid.periodic_x,
                                              fine_grid.periodic_y))


def wavelet_restrict(x: ScalarField, fb: WaveletFilterBank) -> ScalarField:
    return ScalarField(x.grid.coarsen(2), wavelet_down(x.values, fb.h))


def wavelet_prolong(xc: ScalarField, fb: WaveletFilterBank, fine_grid: Grid2D) -> ScalarField:
    if (fine_grid.nx, fine_grid.ny) != (2 * xc.grid.nx, 2 * xc.grid.ny):
        raise ValueError(f"fine grid {fine_grid.nx}x{fine_grid.ny} is not twice "
                         f"{xc.grid.nx}x{xc.grid.ny}")
    return ScalarField(fine_grid, wavelet_up(xc.values, fb.h))


def scale_levels(fine_shape, coarse_shape) -> int:
    """Number of dyadic levels separating two grid shapes."""
    fy, fx = fine_shape[-2:]
    cy, cx = coarse_shape[-2:]
    if cx == 0 or cy == 0 or fx % cx or fy % cy or fx // cx != fy // cy:
        raise ValueError(f"incompatible scales {fx}x{fy} and {cx}x{cy}")
    factor = fx // cx
    s = factor.bit_length() - 1
    if 1 << s != factor:
        raise ValueError(f"scale factor {factor} is not a power of two")
    return s


@dataclass(frozen=True)
class LevelHierarchy:
    """Grids ``grid_0`` (finest) to ``grid_L`` and the fixed wavelet transfers."""

    levels: int
    grids: tuple[Grid2D, ...]
    filterbank: WaveletFilterBank = field(default_factory=haar)

    def restrict(self, a: np.ndarray, level: int) -> np.ndarray:
        """Level-``level`` restriction ``R_l`` (base transfer composed ``level`` times)."""
        for _ in range(level):
            a = wavelet_down(a, self.filterbank.h)
        return a

    def prolong(self, a: np.ndarray, level: int) -> np.ndarray:
        for _ in range(level):
            a = wavelet_up(a, self.filterbank.h)
        return a


def build_hierarchy(grid: Grid2D, L: int, fb: WaveletFilterBank | None = None) -> LevelHierarchy:
    if L < 1:
        raise ValueError("hierarchy needs at least one coarse level")
    if not grid.divisible_by(2 ** L):
        raise ValueError(f"{grid.nx}x{grid.ny} grid is not divisible by 2^{L}")
    grids = [grid]
    for _ in range(L):
        grids.append(grids[-1].coarsen(2))
    return LevelHierarchy(L, tuple(grids), fb or haar())
