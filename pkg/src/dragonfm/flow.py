"""Conditional flow matching and mean-flow objectives plus their samplers.

The probability path is the straight line x_t = (1-t) x0 + t x1 from Gaussian
noise (t=0) to data (t=1); the instantaneous velocity x1 - x0 is constant
along each path. The mean-flow variant regresses the average velocity over an
interval [r, t], which collapses to plain flow matching when r = t and lets a
sampler cross the whole path in one or a few jumps.

Denoiser closures share one signature: model(z, r, t, ctx) with 0 <= r <= t <= 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core.tensor import Tensor, default_fd_step, no_grad


@dataclass
class FlowBatch:
    """One chunk's training tuple; x_t is exactly (1-t) x0 + t x1."""

    x1: np.ndarray        # target lattice embeddings [tokens, latent]
    x0: np.ndarray        # standard normal noise, same shape
    t: float
    r: float
    x_t: np.ndarray = field(init=False)
    v_target: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.x0.shape != self.x1.shape:
            raise ValueError(f"noise shape {self.x0.shape} != target shape {self.x1.shape}")
        if not (0.0 <= self.r <= self.t <= 1.0):
            raise ValueError(f"need 0 <= r <= t <= 1, got t={self.t}, r={self.r}")
        self.x_t, self.v_target = cfm_pair(self.x1, self.x0, self.t)

    @classmethod
    def make(cls, x1: np.ndarray, rng: np.random.Generator,
             p_instant: float = 0.5) -> "FlowBatch":
        x0 = rng.standard_normal(x1.shape).astype(x1.dtype)
        t, r = sample_time_pair(rng, p_instant)
        return cls(x1=x1, x0=x0, t=t, r=r)


def sample_time_pair(rng: np.random.Generator, p_instant: float = 0.5) -> tuple[float, float]:
    """t ~ U(0,1); with probability p_instant r = t, else r ~ U(0, t)."""
    t = float(rng.uniform(0.0, 1.0))
    if rng.uniform() < p_instant:
        return t, t
    return t, float(rng.uniform(0.0, t))


def cfm_pair(x1: np.ndarray, noise: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Interpolant and regression target of the linear path at time t."""
    x1 = np.asarray(x1)
    noise = np.asarray(noise)
    if x1.shape != noise.shape:
        raise ValueError(f"shapes differ: target {x1.shape} vs noise {noise.shape}")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    x_t = (1.0 - t) * noise + t * x1
    return x_t, x1 - noise


@dataclass(frozen=True)
class SamplerConfig:
    """Time grid 0 = t0 < ... < tN = 1 with nfe = N model evaluations."""

    nfe: int
    mode: str = "euler_cfm"            # or "meanflow"
    grid: tuple[float, ...] = ()

    def __post_init__(self):
        if self.mode not in ("euler_cfm", "meanflow"):
            raise ValueError(f"unknown sampler mode {self.mode!r}")
        if self.nfe < 1:
            raise ValueError(f"nfe must be >= 1, got {self.nfe}")
        grid = self.grid or tuple(np.linspace(0.0, 1.0, self.nfe + 1).tolist())
        g = np.asarray(grid, dtype=np.float64)
        if len(g) != self.nfe + 1:
            raise ValueError(f"grid of {len(g)} points does not match nfe {self.nfe}")
        if g[0] != 0.0 or g[-1] != 1.0 or np.any(np.diff(g) <= 0):
            raise ValueError("grid must increase strictly from 0 to 1")
        object.__setattr__(self, "grid", tuple(g.tolist()))


def cfm_loss(model: Callable, batch: FlowBatch, ctx=None) -> Tensor:
    """MSE between the predicted field at (x_t, t, t) and x1 - x0."""
    pred = model(batch.x_t, batch.t, batch.t, ctx)
    diff = pred - Tensor(np.asarray(batch.v_target, dtype=pred.dtype))
    return (diff * diff).mean()


def meanflow_target(model: Callable, x_t: np.ndarray, r: float, t: float,
                    v_target: np.ndarray, ctx=None,
                    h: float | None = None) -> np.ndarray:
    """Gradient-stopped regression target for the average-velocity model.

    target = v - (t - r) * du/dt, where du/dt is the total derivative of the
    model along (dz = v dt, dt = 1) with r held fixed, estimated by central
    differences. The step shrinks near the t = 1 and t = r boundaries so the
    probe points stay inside the model's valid (r, t) region; at r = t the
    correction vanishes and the target is exactly v.
    """
    if r > t:
        raise ValueError(f"need r <= t, got r={r}, t={t}")
    v = np.asarray(v_target)
    if r == t:
        return v.copy()
    if h is None:
        h = default_fd_step(x_t.dtype if hasattr(x_t, "dtype") else np.float32)
    h_eff = min(h, t - r, 1.0 - t)
    if h_eff < 1e-9:  # at the boundary the (t - r) factor makes the term negligible
        return v.copy()
    with no_grad():
        up = model(x_t + h_eff * v, r, t + h_eff, ctx)
        dn = model(x_t - h_eff * v, r, t - h_eff, ctx)
        du = (_as_array(up) - _as_array(dn)) / (2.0 * h_eff)
    return v - (t - r) * du


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def meanflow_loss(model: Callable, batch: FlowBatch, ctx=None,
                  h: float | None = None) -> Tensor:
    """MSE between the model at (x_t, r, t) and the mean-flow target."""
    target = meanflow_target(model, batch.x_t, batch.r, batch.t,
                             batch.v_target, ctx=ctx, h=h)
    pred = model(batch.x_t, batch.r, batch.t, ctx)
    diff = pred - Tensor(np.asarray(target, dtype=pred.dtype))
    return (diff * diff).mean()


def euler_sample(v_fn: Callable, z0: np.ndarray, cfg: SamplerConfig, ctx=None) -> np.ndarray:
    """Euler integration z <- z + dt * v(z, t) over the config grid."""
    if cfg.mode != "euler_cfm":
        raise ValueError(f"euler_sample needs mode 'euler_cfm', got {cfg.mode!r}")
    z = np.array(z0, copy=True)
    grid = cfg.grid
    for i in range(len(grid) - 1):
        dt = grid[i + 1] - grid[i]
        z = z + dt * _as_array(v_fn(z, grid[i], ctx))
    return z


def meanflow_sample(u_fn: Callable, z0: np.ndarray, cfg: SamplerConfig, ctx=None) -> np.ndarray:
    """Jump sampling z <- z + (t_{i+1} - t_i) * u(z, t_i, t_{i+1}).

    Each interval is crossed in a single application of the model's average
    velocity; nfe = 1 is one jump across [0, 1].
    """
    if cfg.mode != "meanflow":
        raise ValueError(f"meanflow_sample needs mode 'meanflow', got {cfg.mode!r}")
    z = np.array(z0, copy=True)
    grid = cfg.grid
    for i in range(len(grid) - 1):
        r, t = grid[i], grid[i + 1]
        z = z + (t - r) * _as_array(u_fn(z, r, t, ctx))
    return z
