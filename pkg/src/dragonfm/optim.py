"""Adam with optional exponential learning-rate decay, plus EMA shadows."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core.tensor import Tensor


@dataclass(frozen=True)
class ExpDecay:
    """lr_init until decay_start steps, then exponential decay to lr_final."""

    lr_init: float = 1e-3
    lr_final: float = 1e-4
    decay_start: int = 300_000
    decay_span: int = 300_000

    def __call__(self, step: int) -> float:
        if step < self.decay_start:
            return self.lr_init
        frac = min(1.0, (step - self.decay_start) / max(1, self.decay_span))
        return self.lr_init * (self.lr_final / self.lr_init) ** frac


class Adam:
    """Standard Adam over a named parameter dict; update order is sorted by name."""

    def __init__(self, params: dict[str, Tensor], lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = dict(params)
        self.lr = lr  # float or callable(step) -> float
        self.b1, self.b2 = betas
        self.eps = eps
        self.step_count = 0
        self._m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def current_lr(self) -> float:
        step = self.step_count
        return float(self.lr(step)) if callable(self.lr) else float(self.lr)

    def step(self):
        lr = self.current_lr()
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.b1 ** t
        bc2 = 1.0 - self.b2 ** t
        for name in sorted(self.params):
            p = self.params[name]
            if p.grad is None:
                continue
            g = p.grad.astype(p.data.dtype)
            m = self._m[name] = self.b1 * self._m[name] + (1.0 - self.b1) * g
            v = self._v[name] = self.b2 * self._v[name] + (1.0 - self.b2) * g * g
            update = lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = p.data - update.astype(p.data.dtype)


class Ema:
    """Exponential moving average of parameters, for evaluation/inference."""

    def __init__(self, params: dict[str, Tensor], decay: float = 0.999):
        self.decay = decay
        self.shadow = {k: p.data.copy() for k, p in params.items()}

    def update(self, params: dict[str, Tensor]):
        d = self.decay
        for k, p in params.items():
            self.shadow[k] = d * self.shadow[k] + (1.0 - d) * p.data

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.shadow.items()}

    def swap_in(self, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
        """Install EMA weights; returns the originals for `swap_out`."""
        saved = {k: p.data for k, p in params.items()}
        for k, p in params.items():
            p.data = self.shadow[k].astype(p.data.dtype)
        return saved

    @staticmethod
    def swap_out(params: dict[str, Tensor], saved: dict[str, np.ndarray]):
        for k, p in params.items():
            p.data = saved[k]
