"""Desk-scale training loop for the epsilon-prediction objective."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from remd import rng as rng_mod
from remd.field import ScalarField
from remd.nnet import ModelConfig, ModelParams, OptimizerState, init_params, loss_and_grad, optimizer_step, save_checkpoint
from remd.physics import PhysicsConfig
from remd.sampler import TimestepSchedule, make_cosine_schedule, noisy_state
from remd.transfer import avg_down

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 1000
    batch_size: int = 8
    learning_rate: float = 1e-3
    scale_factor: int = 2
    size: int = 32
    seed: int = 0
    checkpoint_every: int = 500

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        for name in ("batch_size", "size", "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.scale_factor not in (2, 4):
            raise ValueError("scale_factor must be 2 or 4")


@dataclass
class TrainResult:
    params: ModelParams
    state: OptimizerState
    losses: list[float] = field(default_factory=list)


def make_pair(u_hr: ScalarField, scale: int):
    """``(u_lr, u_hr)`` with ``u_lr`` the 2x2 block mean applied log2(scale) times."""
    levels = scale.bit_length() - 1
    if scale < 2 or 1 << levels != scale:
        raise ValueError(f"scale {scale} is not a power of two")
    if not u_hr.grid.divisible_by(scale):
        raise ValueError(f"{u_hr.grid.nx}x{u_hr.grid.ny} grid is not divisible by {scale}")
    lr, grid = u_hr.values, u_hr.grid
    for _ in range(levels):
        lr = avg_down(lr)
        grid = grid.coarsen(2)
    return ScalarField(grid, lr), u_hr


def _epoch_order(seed, epoch, n):
    return rng_mod.generator(seed, f"shuffle-{epoch}").permutation(n)


def batch_indices(seed: int, iteration: int, batch_size: int, n: int) -> np.ndarray:
    """Dataset indices for ``iteration``: consecutive slices of per-epoch permutations."""
    start = iteration * batch_size
    out = []
    while len(out) < batch_size:
        epoch, pos = divmod(start + len(out), n)
        order = _epoch_order(seed, epoch, n)
        take = min(batch_size - len(out), n - pos)
        out.extend(order[pos:pos + take])
    return np.asarray(out)


def write_loss_log(path, losses, start=0):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "loss"])
        for i, v in enumerate(losses, start):
            w.writerow([i, repr(float(v))])


def train(cfg: TrainConfig, dataset, model: ModelConfig | None = None, phys: PhysicsConfig | None = None,
          sched: TimestepSchedule | None = None, out_dir=None, init: tuple | None = None,
          start_iteration: int = 0, progress=None, extra_meta: dict | None = None) -> TrainResult:
    """Fit all parameters on ``dataset`` (HR fields).

    Each iteration draws its timesteps and noise from a stream keyed by the
    iteration number, so a run resumed from a checkpoint at iteration ``k``
    (``init=(params, state)``, ``start_iteration=k``) continues bit-identically.
    ``extra_meta`` is merged into the metadata stored with each checkpoint.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    model = model or ModelConfig()
    phys = phys or PhysicsConfig()
    sched = sched or make_cosine_schedule()
    pairs = [make_pair(u, cfg.scale_factor) for u in dataset]
    hr = [p[1].values for p in pairs]
    lr = [p[0].values for p in pairs]
    grid = dataset[0].grid
    if init is None:
        params = init_params(model, rng_mod.generator(cfg.seed, "init"))
        state = OptimizerState.create(params.flat.size, cfg.learning_rate)
    else:
        params, state = init
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    meta = {"T": sched.T, "s_offset": sched.s_offset, "scale": cfg.scale_factor, **(extra_meta or {})}
    losses = []
    for it in range(start_iteration, start_iteration + cfg.iterations):
        g = rng_mod.generator(cfg.seed, f"iter-{it}")
        batch = []
        for idx in batch_indices(cfg.seed, it, cfg.batch_size, len(hr)):
            t = int(g.integers(1, sched.T + 1))
            eps = g.standard_normal(hr[idx].shape)
            batch.append((noisy_state(hr[idx], t, sched, eps), t, eps, lr[idx], lr[idx]))
        loss, grad = loss_and_grad(params, batch, sched, phys, grid)
        if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
            raise TrainingDivergedError(f"non-finite loss or gradient at iteration {it} (loss={loss})")
        params, state = optimizer_step(state, params, grad)
        losses.append(loss)
        if progress is not None:
            progress(it, loss)
        if out is not None and (it + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(out / f"checkpoint_{it + 1:06d}.rmdp", params, state, meta)
    if out is not None:
        save_checkpoint(out / "checkpoint.rmdp", params, state, meta)
        write_loss_log(out / "loss.csv", losses, start_iteration)
    log.info("trained %d iterations, final loss %.4g", cfg.iterations, losses[-1] if losses else float("nan"))
    return TrainResult(params, state, losses)
