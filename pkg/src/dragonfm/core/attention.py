"""Masked scaled-dot-product attention kernel.

Disallowed positions receive an additive -inf before the softmax, which gives
them exactly zero weight; callers must never submit a query row with no
allowed keys.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, matmul, softmax, swapaxes


@dataclass(frozen=True)
class AttentionMask:
    """Boolean (queries x keys) matrix; True marks an attendable key."""

    allowed: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.allowed, dtype=bool)
        if a.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {a.shape}")
        object.__setattr__(self, "allowed", a)

    @property
    def rows(self) -> int:
        return self.allowed.shape[0]

    @property
    def cols(self) -> int:
        return self.allowed.shape[1]

    @classmethod
    def full(cls, rows: int, cols: int) -> "AttentionMask":
        return cls(np.ones((rows, cols), dtype=bool))

    def additive(self, dtype=np.float32) -> np.ndarray:
        """0 where allowed, -inf where masked."""
        bias = np.zeros(self.allowed.shape, dtype=dtype)
        bias[~self.allowed] = -np.inf
        return bias


def masked_attention(q: Tensor, k: Tensor, v: Tensor,
                     mask: AttentionMask | None = None,
                     scale: float | None = None) -> Tensor:
    """softmax(q k^T * scale + mask) v over the last two axes.

    q: [..., Sq, d], k: [..., Sk, d], v: [..., Sk, dv]; leading axes broadcast.
    With mask=None every key is allowed.
    """
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(
            f"attention head-dim mismatch: q {q.shape} vs k {k.shape}"
        )
    if k.shape[-2] != v.shape[-2]:
        raise ValueError(
            f"attention key/value count mismatch: k {k.shape} vs v {v.shape}"
        )
    sq, sk = q.shape[-2], k.shape[-2]
    if scale is None:
        scale = 1.0 / float(np.sqrt(q.shape[-1]))
    scores = matmul(q, swapaxes(k, -1, -2)) * float(scale)
    if mask is not None:
        if mask.rows != sq or mask.cols != sk:
            raise ValueError(
                f"mask shape ({mask.rows}, {mask.cols}) does not match "
                f"queries {sq} x keys {sk}"
            )
        dead = ~mask.allowed.any(axis=1)
        if dead.any():
            raise ValueError(
                f"all-masked query rows {np.flatnonzero(dead).tolist()} reached attention"
            )
        scores = scores + Tensor(mask.additive(q.dtype))
    return matmul(softmax(scores, axis=-1), v)
