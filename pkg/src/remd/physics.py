"""Equation-free physics residuals.

Every residual is a pixel-space direction with the input's shape. The
smoothness terms are descent directions of their energies (the negative
L2 gradient with cell area ``dx * dy`` as the quadrature weight):

    rho_lap   =  lap(u)                 for  E = 1/2 sum |grad u|^2 dx dy
    rho_bi    = -lap(lap(u))            for  E = 1/2 sum (lap u)^2 dx dy
    rho_aniso =  div(g(|grad u_a|) grad u)  with g(s) = 1 / (1 + (s/kappa)^2)

``rho_aniso`` is assembled in flux form with face-centred conductances so
it is symmetric and exactly the gradient of a weighted Dirichlet energy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from remd import spectral
from remd.field import FluidMask, Grid2D, ScalarField, check_same_grid
from remd.stencils import shift, ddx, ddy, lap_grid
from remd.transfer import WaveletFilterBank, haar, lift, scale_levels


@dataclass(frozen=True)
class PhysicsConfig:
    w_lap: float = 1.0
    w_bi: float = 1.0
    w_aniso: float = 1.0
    w_spec: float = 1.0
    kappa: float | None = None  # None: 0.1 * median |grad u0|
    huber_delta: float = 1.0
    lambda_max: float = 0.1
    mask: FluidMask | None = None

    def __post_init__(self):
        for name in ("w_lap", "w_bi", "w_aniso", "w_spec", "lambda_max"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.kappa is not None and self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.huber_delta <= 0:
            raise ValueError("huber_delta must be positive")

    @property
    def inactive(self) -> bool:
        return self.lambda_max == 0 or not (self.w_lap or self.w_bi or self.w_aniso or self.w_spec)


def conductance(s, kappa):
    """Perona-Malik edge-stopping function."""
    return 1.0 / (1.0 + (np.asarray(s) / kappa) ** 2)


def grad_magnitude(a, grid: Grid2D):
    gx = ddx(a, grid.dx, grid.periodic_x)
    gy = ddy(a, grid.dy, grid.periodic_y)
    return np.sqrt(gx * gx + gy * gy)


def default_kappa(anchor: np.ndarray, grid: Grid2D) -> float:
    med = float(np.median(grad_magnitude(anchor, grid)))
    return 0.1 * med if med > 0 else 1.0


def _prev_face(F, axis, periodic):
    """Flux on the face below each cell; zero through a closed boundary."""
    if periodic:
        return np.roll(F, 1, axis=axis)
    out = np.zeros_like(F)
    src = [slice(None)] * F.ndim
    dst = [slice(None)] * F.ndim
    src[axis] = slice(0, -1)
    dst[axis] = slice(1, None)
    out[tuple(dst)] = F[tuple(src)]
    return out


def face_conductances(anchor, grid: Grid2D, kappa):
    """``g`` averaged onto the x-faces (i+1/2) and y-faces (j+1/2)."""
    g = conductance(grad_magnitude(anchor, grid), kappa)
    gx = 0.5 * (g + shift(g, 1, -1, grid.periodic_x))
    gy = 0.5 * (g + shift(g, 1, -2, grid.periodic_y))
    return gx, gy


def flux_div(u, gx, gy, grid: Grid2D):
    """``div(g grad u)`` from face fluxes."""
    fx = gx * (shift(u, 1, -1, grid.periodic_x) - u) / grid.dx
    fy = gy * (shift(u, 1, -2, grid.periodic_y) - u) / grid.dy
    return ((fx - _prev_face(fx, -1, grid.periodic_x)) / grid.dx
            + (fy - _prev_face(fy, -2, grid.periodic_y)) / grid.dy)


def huber_grad(d, delta):
    return np.clip(d, -delta, delta)


def spec_weights(u, anchor, delta):
    """Per-bin weights ``-huber'(log P_u - log P_anchor)``; the DC bin gets 0."""
    ny, nx = u.shape[-2:]
    nbins = spectral.default_nbins(ny, nx)
    pu, _ = spectral.radial_bins(spectral.mode_power(u), nbins)
    pa, _ = spectral.radial_bins(spectral.mode_power(anchor), nbins)
    d = np.log(pu + spectral.LOG_FLOOR) - np.log(pa + spectral.LOG_FLOOR)
    w = -huber_grad(d, delta)
    w[0] = 0.0
    return w


# ---------------------------------------------------------------- array kernels

def rho_lap_array(u, grid):
    return lap_grid(u, grid)


def rho_bi_array(u, grid):
    return -lap_grid(lap_grid(u, grid), grid)


def rho_aniso_array(u, anchor, kappa, grid):
    gx, gy = face_conductances(anchor, grid, kappa)
    return flux_div(u, gx, gy, grid)


def rho_spec_array(u, anchor, delta):
    return spectral.filter_array(u, spec_weights(u, anchor, delta))


def time_gate(t, T) -> float:
    """Cosine ramp: 1 at t = T, 0 at t = 0."""
    if T <= 0:
        raise ValueError("T must be positive")
    if not 0 <= t <= T:
        raise ValueError(f"t={t} outside [0, {T}]")
    return 0.5 * (1.0 + np.cos(np.pi * (T - t) / T))


def lambda_schedule(t, T, lambda_max) -> float:
    return lambda_max * time_gate(t, T)


def lift_anchor(u0: np.ndarray, fine_shape, fb: WaveletFilterBank | None = None) -> np.ndarray:
    fb = fb or haar()
    return lift(u0, fb.h, scale_levels(fine_shape, u0.shape))


def physics_array(u, anchor, cfg: PhysicsConfig, t, T, grid: Grid2D):
    """Weighted, masked sum of the residuals for a fine-grid anchor."""
    out = np.zeros_like(u)
    if cfg.w_lap:
        out += cfg.w_lap * rho_lap_array(u, grid)
    if cfg.w_bi:
        out += cfg.w_bi * rho_bi_array(u, grid)
    if cfg.w_aniso:
        kappa = cfg.kappa if cfg.kappa is not None else default_kappa(anchor, grid)
        out += cfg.w_aniso * time_gate(t, T) * rho_aniso_array(u, anchor, kappa, grid)
    if cfg.w_spec:
        out += cfg.w_spec * rho_spec_array(u, anchor, cfg.huber_delta)
    if cfg.mask is not None:
        out *= cfg.mask.values
    return out


# ---------------------------------------------------------------- field ops

def rho_lap(u: ScalarField) -> ScalarField:
    return ScalarField(u.grid, rho_lap_array(u.values, u.grid))


def rho_bi(u: ScalarField) -> ScalarField:
    return ScalarField(u.grid, rho_bi_array(u.values, u.grid))


def rho_aniso(u: ScalarField, u_a: ScalarField, kappa: float) -> ScalarField:
    grid = check_same_grid(u, u_a)
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    return ScalarField(grid, rho_aniso_array(u.values, u_a.values, kappa, grid))


def rho_spec(u: ScalarField, u_anchor: ScalarField, huber_delta: float = 1.0) -> ScalarField:
    grid = check_same_grid(u, u_anchor)
    return ScalarField(grid, rho_spec_array(u.values, u_anchor.values, huber_delta))


def combine_physics(u: ScalarField, u0: ScalarField, cfg: PhysicsConfig, t, T,
                    fb: WaveletFilterBank | None = None) -> ScalarField:
    """Total physics residual; ``u0`` is the coarse anchor, lifted to ``u``'s grid."""
    anchor = lift_anchor(u0.values, u.grid.shape, fb)
    return ScalarField(u.grid, physics_array(u.values, anchor, cfg, t, T, u.grid))
