"""Transformer backbone with hybrid chunk attention.

Attention is bidirectional inside a chunk and causal across chunks; committed
positions (text, speaker prompt, finished chunks) live in a per-layer KV cache
so each new chunk attends to history without recomputation. Denoising passes
condition every block through learned scale/shift/gate modulation derived
from a (t, r) time embedding; unconditioned rows receive the identity
modulation, which keeps the context track independent of time.

Positions use rotary embeddings indexed by absolute token index in
(text | prompt | chunks); a chunk's noisy denoise-track copy reuses the
positions of its clean copy.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core.attention import AttentionMask, masked_attention
from .core.nn import Linear, LayerNorm, Module
from .core.tensor import (
    Tensor,
    concat,
    gelu,
    grad_enabled,
    narrow,
    neg,
    sigmoid,
    swapaxes,
)


# -- sequence layout ---------------------------------------------------------------


@dataclass(frozen=True)
class SequenceLayout:
    """Composite model input: text, speaker prompt, then fixed-size chunks."""

    text_len: int
    prompt_len: int
    chunk_tokens: int = 25
    num_chunks: int = 0

    def __post_init__(self):
        if min(self.text_len, self.prompt_len, self.num_chunks) < 0:
            raise ValueError(f"negative length in layout {self}")
        if self.chunk_tokens < 1:
            raise ValueError(f"chunk_tokens must be >= 1, got {self.chunk_tokens}")

    @staticmethod
    def tokens_per_chunk(chunk_seconds: float, token_rate: float) -> int:
        return int(round(chunk_seconds * token_rate))

    @property
    def prefix_len(self) -> int:
        return self.text_len + self.prompt_len

    @property
    def total_context(self) -> int:
        return self.prefix_len + self.num_chunks * self.chunk_tokens

    def chunk_start(self, k: int) -> int:
        return self.prefix_len + k * self.chunk_tokens

    def block_ids(self) -> np.ndarray:
        """-1 for prefix positions, chunk index for chunk positions."""
        ids = np.empty(self.total_context, dtype=np.int64)
        ids[: self.prefix_len] = -1
        for k in range(self.num_chunks):
            ids[self.chunk_start(k): self.chunk_start(k) + self.chunk_tokens] = k
        return ids


def build_context_mask(layout: SequenceLayout) -> AttentionMask:
    """Block-causal mask over the context track.

    Prefix positions attend among themselves; chunk k attends bidirectionally
    within itself and to everything earlier; nothing attends to later chunks.
    """
    blk = layout.block_ids()
    return AttentionMask(blk[None, :] <= blk[:, None])


def build_denoise_mask(layout: SequenceLayout, k: int,
                       columns: str = "cache") -> AttentionMask:
    """Mask for the noisy queries of chunk k.

    columns="cache": keys are the committed context (prefix + chunks < k)
    followed by the chunk's own noisy positions — the inference-time view.
    columns="full_context": keys span the whole context track followed by the
    noisy positions; clean chunk-k keys and later chunks are disallowed.
    """
    if not 0 <= k < max(layout.num_chunks, 1):
        raise ValueError(f"chunk index {k} out of range for {layout.num_chunks} chunks")
    c = layout.chunk_tokens
    if columns == "cache":
        cols = layout.prefix_len + k * c + c
        return AttentionMask.full(c, cols)
    if columns == "full_context":
        blk = layout.block_ids()
        ctx_allowed = (blk == -1) | (blk < k)
        row = np.concatenate([ctx_allowed, np.ones(c, dtype=bool)])
        return AttentionMask(np.tile(row, (c, 1)))
    raise ValueError(f"unknown column universe {columns!r}")


# -- kv cache ------------------------------------------------------------------------


class KvCache:
    """Per-layer key/value memory; appended segments never mutate."""

    def __init__(self, num_layers: int):
        self.num_layers = num_layers
        self._k: list[np.ndarray | None] = [None] * num_layers
        self._v: list[np.ndarray | None] = [None] * num_layers

    @property
    def cached_len(self) -> int:
        return 0 if self._k[0] is None else self._k[0].shape[-2]

    def layer(self, i: int):
        return self._k[i], self._v[i]

    def append(self, i: int, k: np.ndarray, v: np.ndarray):
        if self._k[i] is None:
            self._k[i] = k.copy()
            self._v[i] = v.copy()
        else:
            self._k[i] = np.concatenate([self._k[i], k], axis=-2)
            self._v[i] = np.concatenate([self._v[i], v], axis=-2)


# -- config ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 4
    heads: int = 4
    model_dim: int = 256
    ffn_dim: int = 1024
    in_dim: int = 256
    cond_dim: int = 256
    text_vocab: int = 0
    latent_dim: int = 0
    max_positions: int = 8192
    rope_base: float = 10000.0
    zero_init_modulation: bool = True

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads


# -- rotary position encoding -----------------------------------------------------------


def _rope_tables(positions: np.ndarray, head_dim: int, base: float, dtype):
    half = head_dim // 2
    inv = base ** (-np.arange(half, dtype=np.float64) * 2.0 / head_dim)
    ang = positions[:, None].astype(np.float64) * inv[None, :]
    cos = np.concatenate([np.cos(ang), np.cos(ang)], axis=-1).astype(dtype)
    sin = np.concatenate([np.sin(ang), np.sin(ang)], axis=-1).astype(dtype)
    return cos, sin


def _rotate_half(x: Tensor) -> Tensor:
    h = x.shape[-1] // 2
    a = narrow(x, -1, 0, h)
    b = narrow(x, -1, h, h)
    return concat([neg(b), a], axis=-1)


def apply_rope(x: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    return x * Tensor(cos) + _rotate_half(x) * Tensor(sin)


# -- time conditioning --------------------------------------------------------------------


def time_features(t: float, r: float, n_freqs: int = 32, dtype=np.float32) -> np.ndarray:
    """Sinusoidal features of t and of the interval t - r, concatenated."""
    if not (0.0 <= r <= t <= 1.0):
        raise ValueError(f"need 0 <= r <= t <= 1, got t={t}, r={r}")
    freqs = np.exp(np.linspace(np.log(1.0), np.log(1000.0), n_freqs))
    feats = []
    for val in (t, t - r):
        ang = freqs * val
        feats.append(np.sin(ang))
        feats.append(np.cos(ang))
    return np.concatenate(feats).astype(dtype)


class TimeEmbedding(Module):
    """(t, r) -> conditioning vector; (t, t) encodes the instantaneous case."""

    def __init__(self, rng, cond_dim: int, n_freqs: int = 32, dtype=np.float32):
        self.n_freqs = n_freqs
        self.lin1 = Linear(rng, 4 * n_freqs, cond_dim, scale=0.02, dtype=dtype)
        self.lin2 = Linear(rng, cond_dim, cond_dim, scale=0.02, dtype=dtype)
        self.dtype = np.dtype(dtype)

    def __call__(self, t: float, r: float) -> Tensor:
        feats = Tensor(time_features(t, r, self.n_freqs, self.dtype).reshape(1, -1))
        h = self.lin1(feats)
        h = h * sigmoid(h)
        return self.lin2(h)  # [1, cond_dim]


def _silu(x: Tensor) -> Tensor:
    return x * sigmoid(x)


# -- transformer ---------------------------------------------------------------------------


class Block(Module):
    def __init__(self, rng, cfg: ModelConfig, dtype=np.float32):
        d = cfg.model_dim
        self.heads = cfg.heads
        self.attn_norm = LayerNorm(d, affine=False, dtype=dtype)
        self.ffn_norm = LayerNorm(d, affine=False, dtype=dtype)
        self.wqkv = Linear(rng, d, 3 * d, scale=0.02, dtype=dtype)
        self.wo = Linear(rng, d, d, scale=0.02, dtype=dtype)
        self.w1 = Linear(rng, d, cfg.ffn_dim, scale=0.02, dtype=dtype)
        self.w2 = Linear(rng, cfg.ffn_dim, d, scale=0.02, dtype=dtype)
        self.mod1 = Linear(rng, cfg.cond_dim, d, scale=0.02, dtype=dtype)
        self.mod2 = Linear(rng, d, 6 * d, scale=0.02,
                           zero_init=cfg.zero_init_modulation, dtype=dtype)

    def _split_heads(self, x: Tensor) -> Tensor:
        s, d = x.shape[-2], x.shape[-1]
        dh = d // self.heads
        lead = x.shape[:-2]
        return swapaxes(x.reshape(lead + (s, self.heads, dh)), -3, -2)

    def _merge_heads(self, x: Tensor) -> Tensor:
        h, s, dh = x.shape[-3], x.shape[-2], x.shape[-1]
        lead = x.shape[:-3]
        return swapaxes(x, -3, -2).reshape(lead + (s, h * dh))

    def __call__(self, x: Tensor, mask, cond: Tensor, rope, cached_kv=None):
        d = x.shape[-1]
        mods = self.mod2(_silu(self.mod1(cond)))
        sa, ha, ga, sf, hf, gf = (narrow(mods, -1, i * d, d) for i in range(6))

        h = self.attn_norm(x) * (1.0 + sa) + ha
        qkv = self.wqkv(h)
        q = self._split_heads(narrow(qkv, -1, 0, d))
        k = self._split_heads(narrow(qkv, -1, d, d))
        v = self._split_heads(narrow(qkv, -1, 2 * d, d))
        cos, sin = rope
        q = apply_rope(q, cos, sin)
        k = apply_rope(k, cos, sin)
        k_new, v_new = k.data, v.data
        if cached_kv is not None and cached_kv[0] is not None:
            k = Tensor(np.concatenate([cached_kv[0], k.data], axis=-2))
            v = Tensor(np.concatenate([cached_kv[1], v.data], axis=-2))
        a = self._merge_heads(masked_attention(q, k, v, mask))
        x = x + (1.0 + ga) * self.wo(a)

        h = self.ffn_norm(x) * (1.0 + sf) + hf
        x = x + (1.0 + gf) * self.w2(gelu(self.w1(h)))
        return x, k_new, v_new


class Backbone(Module):
    """Pre-norm transformer with per-block adaptive modulation and KV cache."""

    def __init__(self, rng, cfg: ModelConfig, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.in_proj = Linear(rng, cfg.in_dim, cfg.model_dim, scale=0.02, dtype=dtype)
        self.blocks = [Block(rng, cfg, dtype=dtype) for _ in range(cfg.layers)]

    def new_cache(self) -> KvCache:
        return KvCache(self.cfg.layers)

    def forward(self, x: Tensor, mask: AttentionMask | None,
                t_cond: Tensor | None = None,
                cache: KvCache | None = None,
                update_cache: bool = False,
                positions: np.ndarray | None = None):
        """Run new positions through the stack.

        x: [S, in_dim] (or [B, S, in_dim] without a cache). With a cache the
        mask must cover cached_len + S key columns. Returns (hidden, cache).
        """
        if x.shape[-1] != self.cfg.in_dim:
            raise ValueError(f"input width {x.shape[-1]} != configured in_dim {self.cfg.in_dim}")
        if x.dtype != self.dtype:
            raise TypeError(f"input dtype {x.dtype} != model dtype {self.dtype}")
        s = x.shape[-2]
        cached = cache.cached_len if cache is not None else 0
        if cache is not None:
            if x.ndim != 2:
                raise ValueError("cached decoding supports a single stream, not batches")
            if grad_enabled() and x.requires_grad:
                raise RuntimeError("cache is an inference mechanism; wrap generation in no_grad()")
        if mask is not None:
            if mask.rows != s or mask.cols != cached + s:
                raise ValueError(
                    f"mask ({mask.rows}, {mask.cols}) does not cover "
                    f"{s} queries x {cached}+{s} keys"
                )
        if positions is None:
            positions = np.arange(cached, cached + s)
        if len(positions) != s:
            raise ValueError(f"{len(positions)} positions for {s} rows")
        if positions.max(initial=0) >= self.cfg.max_positions:
            raise ValueError(f"position {positions.max()} exceeds max {self.cfg.max_positions}")

        if t_cond is None:
            cond = Tensor(np.zeros(x.shape[:-1] + (self.cfg.cond_dim,), dtype=self.dtype))
        else:
            if t_cond.shape[-1] != self.cfg.cond_dim:
                raise ValueError(f"cond width {t_cond.shape[-1]} != cond_dim {self.cfg.cond_dim}")
            cond = t_cond

        rope = _rope_tables(np.asarray(positions), self.cfg.head_dim,
                            self.cfg.rope_base, self.dtype)
        h = self.in_proj(x)
        for i, block in enumerate(self.blocks):
            cached_kv = cache.layer(i) if cache is not None else None
            h, k_new, v_new = block(h, mask, cond, rope, cached_kv)
            if cache is not None and update_cache:
                cache.append(i, k_new, v_new)
        return h, cache
