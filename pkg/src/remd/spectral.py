"""Fourier machinery: transforms, radial spectra, bin filters, Helmholtz projection.

Forward DFT is unnormalised and the inverse divides by ``nx * ny``.
Per-mode power is ``|X|^2 / (nx ny)^2`` so summing it over all modes
gives the field's mean square.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from remd.field import Grid2D, ScalarField, VectorField2D, check_same_grid

LOG_FLOOR = 1e-12
IMAG_TOL = 1e-9


@dataclass(frozen=True)
class Spectrum2D:
    grid: Grid2D
    coefficients: np.ndarray  # shape (ny, nx), standard DFT ordering


@dataclass(frozen=True)
class RadialSpectrum:
    bin_edges: np.ndarray
    power: np.ndarray
    counts: np.ndarray

    @property
    def k(self) -> np.ndarray:
        return self.bin_edges[:-1]

    def total(self) -> float:
        return float(np.sum(self.power * self.counts))


def dft2(x: ScalarField) -> Spectrum2D:
    return Spectrum2D(x.grid, np.fft.fft2(x.values))


def idft2(s: Spectrum2D) -> ScalarField:
    out = np.fft.ifft2(s.coefficients)
    return ScalarField(s.grid, _real(out))


def _real(z):
    scale = max(1.0, float(np.max(np.abs(z.real)))) if z.size else 1.0
    if np.max(np.abs(z.imag), initial=0.0) > IMAG_TOL * scale:
        raise ArithmeticError("inverse transform has a non-negligible imaginary part")
    return z.real.copy()


@lru_cache(maxsize=64)
def wavenumber_magnitude(ny: int, nx: int) -> np.ndarray:
    """|k| in integer index units with signed frequencies."""
    ky = np.fft.fftfreq(ny) * ny
    kx = np.fft.fftfreq(nx) * nx
    return np.sqrt(ky[:, None] ** 2 + kx[None, :] ** 2)


def default_nbins(ny: int, nx: int) -> int:
    return int(np.floor(wavenumber_magnitude(ny, nx).max())) + 1


@lru_cache(maxsize=64)
def bin_index(ny: int, nx: int, nbins: int) -> np.ndarray:
    """Bin of each mode: ``floor(|k|)``, with overflow folded into the last bin."""
    idx = np.floor(wavenumber_magnitude(ny, nx)).astype(np.int64)
    idx = np.minimum(idx, nbins - 1)
    idx.flags.writeable = False
    return idx


def mode_power(a: np.ndarray) -> np.ndarray:
    ny, nx = a.shape[-2:]
    return np.abs(np.fft.fft2(a)) ** 2 / float(nx * ny) ** 2


def radial_bins(power: np.ndarray, nbins: int):
    """Per-bin mean of a mode-power array and the mode counts."""
    ny, nx = power.shape[-2:]
    idx = bin_index(ny, nx, nbins).ravel()
    counts = np.bincount(idx, minlength=nbins)
    sums = np.bincount(idx, weights=power.ravel(), minlength=nbins)
    mean = np.divide(sums, counts, out=np.zeros(nbins), where=counts > 0)
    return mean, counts


def radial_power_spectrum(x: ScalarField, nbins: int | None = None) -> RadialSpectrum:
    ny, nx = x.grid.shape
    nbins = nbins or default_nbins(ny, nx)
    if nbins < 1:
        raise ValueError("nbins must be >= 1")
    power, counts = radial_bins(mode_power(x.values), nbins)
    return RadialSpectrum(np.arange(nbins + 1, dtype=float), power, counts)


def radial_error_spectrum(pred: ScalarField, gt: ScalarField, nbins: int | None = None) -> RadialSpectrum:
    grid = check_same_grid(pred, gt)
    return radial_power_spectrum(ScalarField(grid, pred.values - gt.values), nbins)


def filter_array(a: np.ndarray, w) -> np.ndarray:
    """Multiply every Fourier mode of ``a`` by the weight of its radial bin."""
    ny, nx = a.shape[-2:]
    w = np.asarray(w, dtype=float)
    need = default_nbins(ny, nx)
    if w.size < need:
        raise ValueError(f"need a weight for each of {need} bins, got {w.size}")
    mult = w[bin_index(ny, nx, need)]
    return _real(np.fft.ifft2(np.fft.fft2(a) * mult))


def spectral_filter(x: ScalarField, w) -> ScalarField:
    return ScalarField(x.grid, filter_array(x.values, w))


def central_symbol(n: int, d: float) -> np.ndarray:
    """Fourier symbol of the central difference: ``sin(2 pi k / n) / d``."""
    return np.sin(2 * np.pi * np.fft.fftfreq(n)) / d


def spectral_divergence(w: VectorField2D) -> ScalarField:
    """Divergence evaluated through the central-difference Fourier symbol."""
    g = check_same_grid(w.u, w.v)
    kx = central_symbol(g.nx, g.dx)[None, :]
    ky = central_symbol(g.ny, g.dy)[:, None]
    d = 1j * kx * np.fft.fft2(w.u.values) + 1j * ky * np.fft.fft2(w.v.values)
    return ScalarField(g, _real(np.fft.ifft2(d)))


def helmholtz_project(w: VectorField2D) -> VectorField2D:
    """Remove the gradient part of ``w`` mode by mode.

    Uses the central-difference symbol as the wavenumber so the projected
    field is divergence-free for the stencil ``divergence`` as well.
    Modes where that symbol vanishes carry no discrete divergence and pass
    through unchanged.
    """
    g = check_same_grid(w.u, w.v)
    if not g.periodic:
        raise ValueError("Helmholtz projection needs a periodic grid")
    kx = central_symbol(g.nx, g.dx)[None, :]
    ky = central_symbol(g.ny, g.dy)[:, None]
    k2 = kx**2 + ky**2
    uh = np.fft.fft2(w.u.values)
    vh = np.fft.fft2(w.v.values)
    inv = np.divide(1.0, k2, out=np.zeros_like(k2), where=k2 > 1e-14)
    dot = (kx * uh + ky * vh) * inv
    return VectorField2D(ScalarField(g, _real(np.fft.ifft2(uh - kx * dot))),
                         ScalarField(g, _real(np.fft.ifft2(vh - ky * dot))))
