"""Time-gated multigrid residual corrector.

    S_t(r) = Smooth_0(r) + sum_{l=1..L} w_l(t) P_l Smooth_l(R_l r)

``R_l``/``P_l`` are the fixed wavelet transfers of a
:class:`~remd.transfer.LevelHierarchy`, ``Smooth_l`` is a 3x3 periodic
cross-correlation plus bias, and the gates ``w_l(t)`` come from a
sinusoidal timestep embedding fed through a one-hidden-layer MLP.

The coarse sum is evaluated in nested form,
``P(w_1 z_1 + P(w_2 z_2 + ...))``, so restrictions and prolongations are
shared between levels and the total work stays within a constant factor
of the finest level.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from remd.field import ScalarField
from remd.physics import PhysicsConfig, lambda_schedule, physics_array
from remd.transfer import LevelHierarchy, WaveletFilterBank, avg_down, haar, lift, scale_levels, wavelet_down, wavelet_up

# (dy, dx) offsets in kernel order; kernel[a + 1, b + 1] weights x[j + a, i + b]
OFFSETS = tuple((a, b) for a in (-1, 0, 1) for b in (-1, 0, 1))
IDENTITY_KERNEL = np.array([[0.0, 0, 0], [0, 1, 0], [0, 0, 0]])


def sigmoid(x):
    """Logistic function without cancellation for large negative inputs."""
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def silu(x):
    return x * sigmoid(x)


def silu_grad(x):
    s = sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


def patches(x: np.ndarray) -> np.ndarray:
    """Stack of the nine periodic neighbours, shape ``(9, ..., ny, nx)``."""
    return np.stack([np.roll(x, (-a, -b), axis=(-2, -1)) for a, b in OFFSETS])


def unpatch(p: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`patches`: scatter neighbour contributions back."""
    out = np.zeros(p.shape[1:])
    for k, (a, b) in enumerate(OFFSETS):
        out += np.roll(p[k], (a, b), axis=(-2, -1))
    return out


def conv3x3(x: np.ndarray, kernel: np.ndarray, bias: float = 0.0) -> np.ndarray:
    return np.tensordot(np.asarray(kernel).ravel(), patches(x), axes=1) + bias


def conv3x3_adjoint(g: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Gradient of ``conv3x3(x, kernel)`` w.r.t. ``x`` given upstream ``g``."""
    return unpatch(np.asarray(kernel).ravel()[:, None, None] * g[None])


def timestep_embedding(t, T, d_emb: int) -> np.ndarray:
    """``[sin(f_j t/T), cos(f_j t/T)]`` with frequencies geometric in 1..1000."""
    if d_emb % 2:
        raise ValueError("embedding dimension must be even")
    half = d_emb // 2
    freqs = 1000.0 ** (np.arange(half) / max(half - 1, 1))
    x = (t / T) * freqs
    return np.concatenate([np.sin(x), np.cos(x)])


@dataclass
class SmootherParams:
    kernels: np.ndarray  # (L + 1, 3, 3)
    biases: np.ndarray  # (L + 1,)

    def __post_init__(self):
        if self.kernels.ndim != 3 or self.kernels.shape[1:] != (3, 3):
            raise ValueError("smoother kernels must have shape (levels + 1, 3, 3)")
        if self.biases.shape != (self.kernels.shape[0],):
            raise ValueError("one bias per smoother level")

    @property
    def levels(self) -> int:
        return self.kernels.shape[0] - 1

    @classmethod
    def identity(cls, L: int) -> SmootherParams:
        return cls(np.tile(IDENTITY_KERNEL, (L + 1, 1, 1)), np.zeros(L + 1))


@dataclass
class GateParams:
    w1: np.ndarray  # (hidden, d_emb)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (L, hidden)
    b2: np.ndarray  # (L,)

    @property
    def d_emb(self) -> int:
        return self.w1.shape[1]

    @property
    def levels(self) -> int:
        return self.w2.shape[0]

    @classmethod
    def zeros(cls, L: int, d_emb: int = 32, hidden: int = 32) -> GateParams:
        return cls(np.zeros((hidden, d_emb)), np.zeros(hidden), np.zeros((L, hidden)), np.zeros(L))

    @classmethod
    def constant(cls, L: int, value: float, d_emb: int = 32, hidden: int = 32) -> GateParams:
        """Gates pinned at ``value`` for every t (hand-set experiments)."""
        gp = cls.zeros(L, d_emb, hidden)
        gp.b2[:] = np.log(value / (1.0 - value))
        return gp


def gate_forward(t, T, gp: GateParams):
    emb = timestep_embedding(t, T, gp.d_emb)
    pre = gp.w1 @ emb + gp.b1
    hid = silu(pre)
    w = sigmoid(gp.w2 @ hid + gp.b2)
    return w, (emb, pre, hid, w)


def gate_weights(t, T, gp: GateParams) -> np.ndarray:
    if not 0 <= t <= T:
        raise ValueError(f"t={t} outside [0, {T}]")
    return gate_forward(t, T, gp)[0]


class OpCounter:
    """Tallies multiplications per grid level."""

    def __init__(self):
        self.by_level = defaultdict(int)

    def add(self, level, count):
        self.by_level[level] += int(count)

    @property
    def total(self) -> int:
        return sum(self.by_level.values())


def _transfer_cost(shape, taps):
    ny, nx = shape
    return taps * (ny * nx // 2 + ny * nx // 4)


def corrector_forward(r, gates, sp: SmootherParams, hier: LevelHierarchy, ops: OpCounter | None = None):
    """Array-level ``S_t(r)`` with explicit gate values; returns output and cache."""
    L = hier.levels
    if sp.levels != L or len(gates) != L:
        raise ValueError(f"parameters for {sp.levels} levels and {len(gates)} gates, hierarchy has {L}")
    if r.shape != hier.grids[0].shape:
        raise ValueError(f"residual shape {r.shape} does not match finest grid {hier.grids[0].shape}")
    h = hier.filterbank.h
    coarse = [r]
    for lvl in range(1, L + 1):
        coarse.append(wavelet_down(coarse[-1], h))
        if ops:
            ops.add(lvl - 1, _transfer_cost(coarse[-2].shape, len(h)))
    z = [conv3x3(coarse[lvl], sp.kernels[lvl], sp.biases[lvl]) for lvl in range(L + 1)]
    if ops:
        for lvl in range(L + 1):
            ops.add(lvl, 9 * z[lvl].size)
    acc = np.zeros_like(coarse[L])
    for lvl in range(L, 0, -1):
        acc = wavelet_up(gates[lvl - 1] * z[lvl] + acc, h)
        if ops:
            ops.add(lvl, z[lvl].size)
            ops.add(lvl - 1, _transfer_cost(acc.shape, len(h)))
    return z[0] + acc, (coarse, z)


def corrector_apply(r: ScalarField, t, T, sp: SmootherParams, gp: GateParams,
                    hier: LevelHierarchy, gates=None, ops: OpCounter | None = None) -> ScalarField:
    """Apply ``S_t``; ``gates`` overrides the MLP output when given."""
    if r.grid.shape != hier.grids[0].shape:
        raise ValueError("residual does not live on the finest hierarchy grid")
    w = gate_weights(t, T, gp) if gates is None else np.broadcast_to(np.asarray(gates, float), (hier.levels,))
    e, _ = corrector_forward(r.values, w, sp, hier, ops)
    return ScalarField(r.grid, e)


def smoother_apply(x: ScalarField, kernel, bias: float = 0.0) -> ScalarField:
    kernel = np.asarray(kernel, dtype=float)
    if kernel.shape != (3, 3):
        raise ValueError("smoother kernel must be 3x3")
    return ScalarField(x.grid, conv3x3(x.values, kernel, bias))


# ---------------------------------------------------------------- residual

def data_residual_coarse(u_t: np.ndarray, u_lr: np.ndarray) -> np.ndarray:
    """``u_lr - R(u_t)`` with ``R`` the averaging restriction repeated to ``u_lr``'s scale."""
    s = scale_levels(u_t.shape, u_lr.shape)
    ru = u_t
    for _ in range(s):
        ru = avg_down(ru)
    return u_lr - ru


def residual_array(u_t, u_lr, anchor, cfg: PhysicsConfig, t, T, grid, fb: WaveletFilterBank):
    """Fine-grid residual: lifted data mismatch plus ``lambda(t)`` times physics."""
    coarse = data_residual_coarse(u_t, u_lr)
    r = lift(coarse, fb.h, scale_levels(u_t.shape, u_lr.shape))
    lam = lambda_schedule(t, T, cfg.lambda_max)
    if lam and not cfg.inactive:
        r = r + lam * physics_array(u_t, anchor, cfg, t, T, grid)
    return r


def assemble_residual(u_t: ScalarField, u_lr: ScalarField, u0_anchor: ScalarField,
                      cfg: PhysicsConfig, t, T, fb: WaveletFilterBank | None = None) -> ScalarField:
    fb = fb or haar()
    s = scale_levels(u_t.grid.shape, u_lr.grid.shape)
    anchor = lift(u0_anchor.values, fb.h, scale_levels(u_t.grid.shape, u0_anchor.grid.shape))
    if s == 0:
        raise ValueError("LR field must be coarser than the HR estimate")
    return ScalarField(u_t.grid, residual_array(u_t.values, u_lr.values, anchor, cfg, t, T, u_t.grid, fb))
