"""Minimal parameter-container layer on top of the autodiff tensors."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Tensor, embedding_lookup, layer_norm


class Module:
    """Base class: discovers parameters by walking attributes.

    Attribute order is sorted by name so parameter iteration (and therefore
    optimizer update order) is deterministic.
    """

    def named_params(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name in sorted(vars(self)):
            obj = getattr(self, name)
            full = f"{prefix}{name}" if prefix else name
            if isinstance(obj, Tensor) and obj.requires_grad:
                yield full, obj
            elif isinstance(obj, Module):
                yield from obj.named_params(full + ".")
            elif isinstance(obj, (list, tuple)):
                for i, item in enumerate(obj):
                    if isinstance(item, Module):
                        yield from item.named_params(f"{full}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{full}.{i}", item

    def params(self) -> dict[str, Tensor]:
        return dict(self.named_params())

    def num_params(self) -> int:
        return sum(p.size for p in self.params().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_params()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = self.params()
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise KeyError(f"state dict mismatch: missing {missing}, unexpected {extra}")
        for k, p in own.items():
            arr = np.asarray(state[k], dtype=p.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {p.data.shape}")
            p.data = arr

    def astype(self, dtype) -> "Module":
        for _, p in self.named_params():
            p.data = p.data.astype(dtype)
        return self


def init_normal(rng: np.random.Generator, shape, scale: float = 0.02, dtype=np.float32) -> Tensor:
    return Tensor((rng.standard_normal(shape) * scale).astype(dtype), requires_grad=True)


def init_zeros(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def init_ones(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int,
                 bias: bool = True, scale: float = 0.02, zero_init: bool = False,
                 dtype=np.float32):
        self.w = init_zeros((d_in, d_out), dtype) if zero_init else init_normal(rng, (d_in, d_out), scale, dtype)
        self.b = init_zeros((d_out,), dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.w
        if self.b is not None:
            y = y + self.b
        return y

    def named_params(self, prefix: str = ""):
        yield f"{prefix}w", self.w
        if self.b is not None:
            yield f"{prefix}b", self.b


class LayerNorm(Module):
    def __init__(self, dim: int, affine: bool = True, eps: float = 1e-5, dtype=np.float32):
        self.eps = eps
        self.affine = affine
        if affine:
            self.g = init_ones((dim,), dtype)
            self.b = init_zeros((dim,), dtype)
        else:
            # fixed identity affine, not trainable
            self.g = Tensor(np.ones(dim, dtype=dtype))
            self.b = Tensor(np.zeros(dim, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.g, self.b, self.eps)

    def named_params(self, prefix: str = ""):
        if self.affine:
            yield f"{prefix}g", self.g
            yield f"{prefix}b", self.b


class Embedding(Module):
    def __init__(self, rng: np.random.Generator, vocab: int, dim: int,
                 scale: float = 0.02, dtype=np.float32):
        self.table = init_normal(rng, (vocab, dim), scale, dtype)

    def __call__(self, ids) -> Tensor:
        return embedding_lookup(self.table, ids)
