"""Learnable parameters, forward passes with hand-written gradients, Adam, checkpoints.

Flat parameter layout (``ModelParams.flat``), in order:

    smoother.kernels  (L+1, 3, 3)     smoother.biases  (L+1,)
    gate.w1           (hidden, d_emb) gate.b1          (hidden,)
    gate.w2           (L, hidden)     gate.b2          (L,)
    head.w1           (c, 3, 3)       head.b1          (c,)
    head.film_w       (2c, d_emb)     head.film_b      (2c,)
    head.w2           (c, 3, 3)       head.b2          (1,)

The model's noise prediction is

    eps_hat = -(alpha_t * e_t + beta_t * g(u_t, t)) / sqrt(1 - abar_t)

with ``e_t = S_t(r(u_t))`` the corrector drift and ``g`` the learned head,
so one reverse step ``u + alpha e + beta g`` lands on the model's estimate
of the clean field.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from remd.field import Grid2D, ScalarField
from remd.mgcorr import (IDENTITY_KERNEL, GateParams, SmootherParams, corrector_forward, gate_forward,
                         patches, residual_array, silu, silu_grad, timestep_embedding, unpatch)
from remd.physics import PhysicsConfig
from remd.transfer import build_hierarchy, get_filterbank, lift, scale_levels, wavelet_down

CHECKPOINT_MAGIC = b"RMDP"
CHECKPOINT_VERSION = 1
GATE_BIAS_INIT = -3.0
SMOOTHER_NOISE = 1e-2


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    levels: int = 3
    d_emb: int = 32
    hidden: int = 32
    channels: int = 8
    wavelet: str = "haar"

    def layout(self):
        L, d, hd, c = self.levels, self.d_emb, self.hidden, self.channels
        return (
            ("smoother.kernels", (L + 1, 3, 3)), ("smoother.biases", (L + 1,)),
            ("gate.w1", (hd, d)), ("gate.b1", (hd,)), ("gate.w2", (L, hd)), ("gate.b2", (L,)),
            ("head.w1", (c, 3, 3)), ("head.b1", (c,)),
            ("head.film_w", (2 * c, d)), ("head.film_b", (2 * c,)),
            ("head.w2", (c, 3, 3)), ("head.b2", (1,)),
        )

    @property
    def size(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.layout())


@dataclass
class HeadParams:
    w1: np.ndarray
    b1: np.ndarray
    film_w: np.ndarray
    film_b: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @property
    def channels(self) -> int:
        return self.w1.shape[0]

    @property
    def d_emb(self) -> int:
        return self.film_w.shape[1]


class ModelParams:
    """All learnable parameters; component arrays are views into ``flat``."""

    def __init__(self, config: ModelConfig, flat=None):
        self.config = config
        if flat is None:
            flat = np.zeros(config.size)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (config.size,):
            raise ValueError(f"expected {config.size} parameters, got {flat.size}")
        self.flat = flat
        self._views = {}
        off = 0
        for name, shape in config.layout():
            n = int(np.prod(shape))
            self._views[name] = flat[off:off + n].reshape(shape)
            off += n

    def __getitem__(self, name) -> np.ndarray:
        return self._views[name]

    def names(self):
        return list(self._views)

    def offsets(self) -> dict[str, slice]:
        out, off = {}, 0
        for name, shape in self.config.layout():
            n = int(np.prod(shape))
            out[name] = slice(off, off + n)
            off += n
        return out

    @property
    def smoothers(self) -> SmootherParams:
        return SmootherParams(self["smoother.kernels"], self["smoother.biases"])

    @property
    def gates(self) -> GateParams:
        return GateParams(self["gate.w1"], self["gate.b1"], self["gate.w2"], self["gate.b2"])

    @property
    def head(self) -> HeadParams:
        return HeadParams(self["head.w1"], self["head.b1"], self["head.film_w"],
                          self["head.film_b"], self["head.w2"], self["head.b2"])

    def copy(self) -> ModelParams:
        return ModelParams(self.config, self.flat.copy())


def flatten(params: ModelParams) -> np.ndarray:
    return params.flat.copy()


def unflatten(config: ModelConfig, vec) -> ModelParams:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (config.size,):
        raise ValueError(f"expected {config.size} parameters, got {vec.size}")
    return ModelParams(config, vec.copy())


def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Near-identity smoothers, mostly-closed coarse gates, zero head output layer."""
    p = ModelParams(config)
    L = config.levels
    p["smoother.kernels"][:] = IDENTITY_KERNEL
    p["smoother.kernels"][:] += SMOOTHER_NOISE * rng.standard_normal((L + 1, 3, 3))
    p["gate.w1"][:] = rng.standard_normal(p["gate.w1"].shape) / np.sqrt(config.d_emb)
    p["gate.w2"][:] = 0.1 * rng.standard_normal(p["gate.w2"].shape) / np.sqrt(config.hidden)
    p["gate.b2"][:] = GATE_BIAS_INIT
    p["head.w1"][:] = rng.standard_normal(p["head.w1"].shape) / 3.0
    p["head.film_w"][:] = 0.01 * rng.standard_normal(p["head.film_w"].shape)
    return p


# ---------------------------------------------------------------- head

def head_forward_array(u: np.ndarray, t, T, hp: HeadParams):
    c = hp.channels
    emb = timestep_embedding(t, T, hp.d_emb)
    film = hp.film_w @ emb + hp.film_b
    scale, shift = film[:c], film[c:]
    pu = patches(u)
    h1 = np.tensordot(hp.w1.reshape(c, 9), pu, axes=1) + hp.b1[:, None, None]
    h2 = h1 * (1.0 + scale)[:, None, None] + shift[:, None, None]
    a = silu(h2)
    pa = patches(a)
    out = np.einsum("ck,kcyx->yx", hp.w2.reshape(c, 9), pa) + hp.b2[0]
    return out, (emb, scale, pu, h1, h2, pa)


def head_backward(grad_out: np.ndarray, hp: HeadParams, cache) -> dict[str, np.ndarray]:
    emb, scale, pu, h1, h2, pa = cache
    c = hp.channels
    w2 = hp.w2.reshape(c, 9)
    d_w2 = np.einsum("yx,kcyx->ck", grad_out, pa)
    d_b2 = np.array([grad_out.sum()])
    d_a = unpatch(w2.T[:, :, None, None] * grad_out[None, None])
    d_h2 = d_a * silu_grad(h2)
    d_scale = np.einsum("cyx,cyx->c", d_h2, h1)
    d_shift = d_h2.sum(axis=(1, 2))
    d_h1 = d_h2 * (1.0 + scale)[:, None, None]
    d_w1 = np.tensordot(d_h1, pu, axes=([1, 2], [1, 2]))
    d_film = np.concatenate([d_scale, d_shift])
    return {"head.w1": d_w1.reshape(c, 3, 3), "head.b1": d_h1.sum(axis=(1, 2)),
            "head.film_w": np.outer(d_film, emb), "head.film_b": d_film,
            "head.w2": d_w2.reshape(c, 3, 3), "head.b2": d_b2}


def head_forward(u_t: ScalarField, t, T, hp: HeadParams) -> ScalarField:
    return ScalarField(u_t.grid, head_forward_array(u_t.values, t, T, hp)[0])


# ---------------------------------------------------------------- corrector / gates

def corrector_backward(grad_e, gates, sp: SmootherParams, hier, cache):
    """Gradients of ``<grad_e, S_t r>`` w.r.t. smoother params and gate values."""
    coarse, z = cache
    h = hier.filterbank.h
    L = hier.levels
    d_k = np.zeros_like(sp.kernels)
    d_b = np.zeros_like(sp.biases)
    d_gates = np.zeros(L)
    d_z = [grad_e]
    up = grad_e
    for lvl in range(1, L + 1):
        up = wavelet_down(up, h)
        d_gates[lvl - 1] = np.vdot(up, z[lvl])
        d_z.append(gates[lvl - 1] * up)
    for lvl in range(L + 1):
        d_k[lvl] = np.tensordot(patches(coarse[lvl]), d_z[lvl], axes=([1, 2], [0, 1])).reshape(3, 3)
        d_b[lvl] = d_z[lvl].sum()
    return d_k, d_b, d_gates


def gate_backward(d_w, gp: GateParams, cache):
    emb, pre, hid, w = cache
    d_o = d_w * w * (1.0 - w)
    d_hid = gp.w2.T @ d_o
    d_pre = d_hid * silu_grad(pre)
    return {"gate.w1": np.outer(d_pre, emb), "gate.b1": d_pre,
            "gate.w2": np.outer(d_o, hid), "gate.b2": d_o}


# ---------------------------------------------------------------- full model

@lru_cache(maxsize=32)
def hierarchy_for(grid: Grid2D, levels: int, wavelet: str):
    return build_hierarchy(grid, levels, get_filterbank(wavelet))


def _arr(x):
    return x.values if isinstance(x, ScalarField) else np.asarray(x, dtype=np.float64)


def lifted_anchor(u0, fine_shape, wavelet="haar"):
    u0 = _arr(u0)
    return lift(u0, get_filterbank(wavelet).h, scale_levels(fine_shape, u0.shape))


def model_terms(params: ModelParams, u_t, t, T, u_lr, anchor, phys: PhysicsConfig,
                grid: Grid2D | None = None, gates=None):
    """Drift ``e_t`` and head output ``g`` for one state, plus a cache for backprop.

    ``anchor`` is the fine-grid (already lifted) anchor field. ``gates``
    overrides the gate MLP when given.
    """
    u_t = _arr(u_t)
    grid = grid or Grid2D(u_t.shape[1], u_t.shape[0])
    cfg = params.config
    fb = get_filterbank(cfg.wavelet)
    hier = hierarchy_for(grid, cfg.levels, cfg.wavelet)
    r = residual_array(u_t, _arr(u_lr), anchor, phys, t, T, grid, fb)
    if gates is None:
        w, gcache = gate_forward(t, T, params.gates)
    else:
        w, gcache = np.broadcast_to(np.asarray(gates, float), (cfg.levels,)), None
    e, ccache = corrector_forward(r, w, params.smoothers, hier, None)
    g, hcache = head_forward_array(u_t, t, T, params.head)
    return e, g, (hier, w, gcache, ccache, hcache)


def eps_prediction(e, g, alpha, beta, noise_scale):
    return -(alpha * e + beta * g) / noise_scale


def loss_and_grad(params: ModelParams, batch, sched, phys: PhysicsConfig,
                  grid: Grid2D | None = None):
    """Mean-squared epsilon-prediction loss over ``batch`` and its exact gradient.

    Each batch item is ``(u_t, t, eps_target, u_lr, u0)`` with ``u0`` the
    coarse anchor. Items are reduced in order, so results are deterministic.
    """
    if not batch:
        raise ValueError("empty batch")
    grad = np.zeros_like(params.flat)
    sl = params.offsets()
    total = 0.0
    nb = len(batch)
    for u_t, t, eps, u_lr, u0 in batch:
        u_t, eps = _arr(u_t), _arr(eps)
        if eps.shape != u_t.shape:
            raise ValueError(f"target shape {eps.shape} does not match state {u_t.shape}")
        t = int(t)
        anchor = lifted_anchor(u0, u_t.shape, params.config.wavelet)
        e, g, (hier, w, gcache, ccache, hcache) = model_terms(params, u_t, t, sched.T, u_lr,
                                                             anchor, phys, grid)
        a, b, s = sched.alpha[t], sched.beta[t], sched.noise_scale[t]
        diff = eps_prediction(e, g, a, b, s) - eps
        total += float(np.mean(diff * diff))
        d_hat = 2.0 * diff / (nb * diff.size)
        d_k, d_b, d_w = corrector_backward(-a / s * d_hat, w, params.smoothers, hier, ccache)
        grad[sl["smoother.kernels"]] += d_k.ravel()
        grad[sl["smoother.biases"]] += d_b
        for name, val in gate_backward(d_w, params.gates, gcache).items():
            grad[sl[name]] += val.ravel()
        for name, val in head_backward(-b / s * d_hat, params.head, hcache).items():
            grad[sl[name]] += val.ravel()
    return total / nb, grad


# ---------------------------------------------------------------- optimiser

@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, n: int, lr: float = 1e-3, **kw) -> OptimizerState:
        return cls(np.zeros(n), np.zeros(n), 0, lr, **kw)


def optimizer_step(state: OptimizerState, params: ModelParams, grad):
    """One bias-corrected Adam update; returns new params and state."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.flat.shape or grad.shape != state.m.shape:
        raise ValueError(f"gradient length {grad.size} does not match {params.flat.size} parameters")
    step = state.step + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grad
    v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    m_hat = m / (1 - state.beta1**step)
    v_hat = v / (1 - state.beta2**step)
    flat = params.flat - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = OptimizerState(m, v, step, state.lr, state.beta1, state.beta2, state.eps)
    return ModelParams(params.config, flat), new_state


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, params: ModelParams, state: OptimizerState | None = None,
                    meta: dict | None = None) -> None:
    """Write the RMDP checkpoint.

    Layout (little-endian): magic, u32 version, u64 count, count f64
    parameters, then optimiser state (u64 step, f64 lr, beta1, beta2, eps,
    count f64 first moments, count f64 second moments), then u32 length
    and a UTF-8 JSON block holding the model config and ``meta``.
    """
    n = params.flat.size
    state = state or OptimizerState.create(n)
    trailer = json.dumps({"model": asdict(params.config), "meta": meta or {}}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, n))
        fh.write(params.flat.astype("<f8").tobytes())
        fh.write(struct.pack("<Qdddd", state.step, state.lr, state.beta1, state.beta2, state.eps))
        fh.write(state.m.astype("<f8").tobytes())
        fh.write(state.v.astype("<f8").tobytes())
        fh.write(struct.pack("<I", len(trailer)))
        fh.write(trailer)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(params, state, meta)``."""
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
    version, n = struct.unpack_from("<IQ", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 16
    need = off + 8 * n + 40 + 16 * n + 4
    if len(data) < need:
        raise CheckpointError(f"{path}: truncated checkpoint, expected at least {need} bytes, got {len(data)}")
    flat = np.frombuffer(data, "<f8", n, off).astype(np.float64)
    off += 8 * n
    step, lr, b1, b2, eps = struct.unpack_from("<Qdddd", data, off)
    off += 40
    m = np.frombuffer(data, "<f8", n, off).astype(np.float64)
    off += 8 * n
    v = np.frombuffer(data, "<f8", n, off).astype(np.float64)
    off += 8 * n
    (tlen,) = struct.unpack_from("<I", data, off)
    off += 4
    if len(data) < off + tlen:
        raise CheckpointError(f"{path}: truncated config block")
    trailer = json.loads(data[off:off + tlen].decode())
    config = ModelConfig(**trailer["model"])
    if config.size != n:
        raise CheckpointError(f"{path}: config implies {config.size} parameters, file has {n}")
    return ModelParams(config, flat), OptimizerState(m, v, step, lr, b1, b2, eps), trailer["meta"]
