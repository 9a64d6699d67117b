"""Noise schedule, forward diffusion and the few-step residual sampler."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from remd import rng as rng_mod
from remd.field import Grid2D, ScalarField, check_same_grid
from remd.nnet import ModelParams, lifted_anchor, model_terms
from remd.physics import PhysicsConfig
from remd.transfer import get_filterbank, lift


@dataclass(frozen=True)
class TimestepSchedule:
    T: int
    alphabar: np.ndarray     # (T + 1,)
    alpha: np.ndarray        # drift coefficient, alpha[0] unused
    beta: np.ndarray         # head coefficient
    sigma: np.ndarray        # reverse-step noise; all zero for DDIM
    ddim_steps: np.ndarray   # strictly decreasing timesteps visited at inference
    s_offset: float = 0.008

    @property
    def noise_scale(self) -> np.ndarray:
        return np.sqrt(np.clip(1.0 - self.alphabar, 0.0, None))

    @property
    def nfe(self) -> int:
        return len(self.ddim_steps)

    def with_nfe(self, nfe: int) -> TimestepSchedule:
        return replace(self, ddim_steps=ddim_subsequence(self.T, nfe))


def ddim_subsequence(T: int, nfe: int) -> np.ndarray:
    """``nfe`` evenly spaced timesteps starting at ``T``."""
    if nfe < 0 or nfe > T:
        raise ValueError(f"nfe must lie in [0, {T}], got {nfe}")
    return np.array([int(round(T - i * T / nfe)) for i in range(nfe)], dtype=np.int64)


def make_cosine_schedule(T: int = 1000, s_offset: float = 0.008, nfe: int | None = None,
                         alpha_clip: tuple[float, float] = (0.05, 1.0), ddim: bool = True) -> TimestepSchedule:
    """Cosine ``abar_t`` with drift ``alpha_t = 0.5 (1 - abar_t) / (1 - abar_{t-1})``, clipped.

    ``nfe`` defaults to ``min(5, T)`` reverse steps.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    if nfe is None:
        nfe = min(5, T)
    t = np.arange(T + 1)
    f = np.cos((t / T + s_offset) / (1 + s_offset) * np.pi / 2) ** 2
    abar = f / f[0]
    abar[0] = 1.0
    one_minus = 1.0 - abar
    ratio = np.full(T + 1, np.inf)
    ratio[1:] = np.divide(one_minus[1:], one_minus[:-1], out=np.full(T, np.inf), where=one_minus[:-1] > 0)
    alpha = np.clip(0.5 * ratio, *alpha_clip)
    alpha[0] = 0.0
    if ddim:
        sigma = np.zeros(T + 1)
    else:
        prev = np.concatenate([[1.0], abar[:-1]])
        var = np.divide(1 - prev, one_minus, out=np.zeros(T + 1), where=one_minus > 0) * (1 - abar / prev)
        sigma = np.sqrt(np.clip(var, 0.0, None))
    return TimestepSchedule(T, abar, alpha, alpha.copy(), sigma, ddim_subsequence(T, nfe), s_offset)


def forward_diffuse(u0: ScalarField, t: int, sched: TimestepSchedule, eps: ScalarField) -> ScalarField:
    """Variance-preserving forward sample ``sqrt(abar) u0 + sqrt(1 - abar) eps``."""
    grid = check_same_grid(u0, eps)
    ab = sched.alphabar[t]
    return ScalarField(grid, np.sqrt(ab) * u0.values + np.sqrt(1.0 - ab) * eps.values)


def noisy_state(u0, t: int, sched: TimestepSchedule, eps):
    """Training state ``u0 + sqrt(1 - abar) eps``.

    This is the unscaled counterpart of :func:`forward_diffuse`: the signal
    keeps unit gain so ``u_lr - R(u_t)`` measures only injected noise and
    the additive reverse step returns to the clean field's scale.
    """
    if isinstance(u0, ScalarField):
        grid = check_same_grid(u0, eps)
        return ScalarField(grid, u0.values + sched.noise_scale[t] * eps.values)
    return u0 + sched.noise_scale[t] * eps


def _arr(x):
    return x.values if isinstance(x, ScalarField) else np.asarray(x, dtype=np.float64)


def reverse_step(u_t, t: int, sched: TimestepSchedule, params: ModelParams, u_lr, u0,
                 phys: PhysicsConfig, grid: Grid2D | None = None, rng=None, gates=None):
    """``u_{t-1} = u_t + alpha_t e_t + beta_t g(u_t, t) + sigma_t eps``."""
    out_field = isinstance(u_t, ScalarField)
    u = _arr(u_t)
    if grid is None:
        grid = u_t.grid if out_field else Grid2D(u.shape[1], u.shape[0])
    a, b, s = sched.alpha[t], sched.beta[t], sched.sigma[t]
    nxt = u
    if a or b:
        anchor = lifted_anchor(u0, u.shape, params.config.wavelet)
        e, g, _ = model_terms(params, u, t, sched.T, u_lr, anchor, phys, grid, gates)
        nxt = u + a * e + b * g
    if s:
        if rng is None:
            raise ValueError("stochastic step needs a random generator")
        nxt = nxt + s * rng.standard_normal(u.shape)
    return ScalarField(grid, nxt) if out_field else nxt


def initial_state(u_lr, params: ModelParams, sched: TimestepSchedule, scale: int, seed: int,
                  init_noise: bool = True):
    lr = _arr(u_lr)
    levels = scale.bit_length() - 1
    if 1 << levels != scale or levels < 1:
        raise ValueError(f"scale factor {scale} is not a power of two >= 2")
    u = lift(lr, get_filterbank(params.config.wavelet).h, levels)
    if init_noise:
        t0 = int(sched.ddim_steps[0]) if sched.nfe else sched.T
        u = u + sched.noise_scale[t0] * rng_mod.generator(seed, "sample-init").standard_normal(u.shape)
    return u


def sample(u_lr: ScalarField, params: ModelParams, sched: TimestepSchedule, phys: PhysicsConfig,
           seed: int = 0, scale: int = 2, init_noise: bool = True, gates=None, trajectory=None) -> ScalarField:
    """Super-resolve ``u_lr`` by ``scale`` with the schedule's DDIM subsequence.

    If ``trajectory`` is a list, every intermediate state (starting with
    the initial one) is appended to it.
    """
    grid = u_lr.grid.refine(scale)
    u = initial_state(u_lr, params, sched, scale, seed, init_noise)
    if trajectory is not None:
        trajectory.append(u)
    step_rng = rng_mod.generator(seed, "sample-steps")
    for t in sched.ddim_steps:
        u = reverse_step(u, int(t), sched, params, u_lr.values, u_lr.values, phys, grid,
                         rng=step_rng, gates=gates)
        if trajectory is not None:
            trajectory.append(u)
    return ScalarField(grid, u)
