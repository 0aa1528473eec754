"""Grouped finite scalar quantization.

Each latent is split into G groups of D scalars. Every scalar is bounded with
tanh and rounded onto a fixed per-dimension lattice {-1, -1+2/(L-1), ..., +1};
the D codes of a group pack bijectively into one token id via mixed-radix
arithmetic. Lattice points double as the continuous regression targets of the
denoising model, and `snap` projects arbitrary vectors back onto the lattice.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from math import prod
from pathlib import Path

import numpy as np

from .core.tensor import Tensor

TOKEN_MAGIC = b"DFMT"
TOKEN_VERSION = 1


@dataclass(frozen=True)
class FsqConfig:
    """G groups, each quantized with the same per-dimension level counts."""

    groups: int = 5
    levels: tuple[int, ...] = (5, 5, 4)

    def __post_init__(self):
        if self.groups < 1:
            raise ValueError(f"groups must be >= 1, got {self.groups}")
        if not self.levels or any(l < 2 for l in self.levels):
            raise ValueError(f"every level count must be >= 2, got {self.levels}")
        object.__setattr__(self, "levels", tuple(int(l) for l in self.levels))

    @property
    def dims_per_group(self) -> int:
        return len(self.levels)

    @property
    def latent_dim(self) -> int:
        return self.groups * len(self.levels)

    @property
    def codebook_size(self) -> int:
        return prod(self.levels)

    def level_array(self) -> np.ndarray:
        """Per-dimension level counts over the full latent, shape [latent_dim]."""
        return np.tile(np.asarray(self.levels, dtype=np.int64), self.groups)


@dataclass(frozen=True)
class FsqFrame:
    token_ids: np.ndarray   # [groups] ints in [0, codebook_size)
    embedding: np.ndarray   # [latent_dim] lattice values in [-1, 1]


# -- per-dimension lattice arithmetic -----------------------------------------


def _codes_to_values(codes: np.ndarray, levels: np.ndarray) -> np.ndarray:
    return (2.0 * codes / (levels - 1) - 1.0).astype(np.float32)


def _values_to_codes(v: np.ndarray, levels: np.ndarray) -> np.ndarray:
    """Nearest lattice code per dimension; ties round half away from zero."""
    v = np.clip(v, -1.0, 1.0)
    y = (levels - 1) * (v + 1.0) / 2.0
    c = np.where(v >= 0, np.floor(y + 0.5), np.ceil(y - 0.5))
    return np.clip(c, 0, levels - 1).astype(np.int64)


def _pack(codes: np.ndarray, levels: tuple[int, ...]) -> np.ndarray:
    """Mixed-radix pack over the last axis: id = sum_i c_i * prod_{j<i} L_j."""
    radix = np.concatenate([[1], np.cumprod(levels[:-1])]).astype(np.int64)
    return (codes * radix).sum(axis=-1)


def _unpack(ids: np.ndarray, levels: tuple[int, ...]) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    codes = np.empty(ids.shape + (len(levels),), dtype=np.int64)
    rem = ids.copy()
    for i, l in enumerate(levels):
        codes[..., i] = rem % l
        rem //= l
    return codes


# -- public operations ----------------------------------------------------------


def codes_to_id(codes, levels) -> int:
    """Pack one group's per-dimension codes into a token id."""
    codes = np.asarray(codes, dtype=np.int64)
    levels = tuple(int(l) for l in levels)
    if codes.shape != (len(levels),):
        raise ValueError(f"expected {len(levels)} codes, got shape {codes.shape}")
    if np.any(codes < 0) or np.any(codes >= np.asarray(levels)):
        raise ValueError(f"codes {codes.tolist()} out of range for levels {levels}")
    return int(_pack(codes, levels))


def id_to_codes(token_id: int, levels) -> tuple[int, ...]:
    levels = tuple(int(l) for l in levels)
    size = prod(levels)
    if not 0 <= token_id < size:
        raise ValueError(f"token id {token_id} out of range [0, {size})")
    return tuple(int(c) for c in _unpack(np.asarray(token_id), levels))


def id_to_embedding(token_id: int, levels) -> np.ndarray:
    """Lattice vector of one group's token id."""
    codes = np.asarray(id_to_codes(token_id, levels), dtype=np.int64)
    return _codes_to_values(codes, np.asarray(levels, dtype=np.int64))


def ids_to_embedding(ids, cfg: FsqConfig) -> np.ndarray:
    """Vectorized lattice lookup: ids [..., groups] -> [..., latent_dim]."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape[-1] != cfg.groups:
        raise ValueError(f"expected {cfg.groups} group ids, got shape {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.codebook_size):
        raise ValueError(
            f"token ids out of range [0, {cfg.codebook_size}): "
            f"min {ids.min()}, max {ids.max()}"
        )
    codes = _unpack(ids, cfg.levels)                      # [..., G, D]
    flat = codes.reshape(codes.shape[:-2] + (cfg.latent_dim,))
    return _codes_to_values(flat, cfg.level_array())


def quantize_array(z, cfg: FsqConfig) -> tuple[np.ndarray, np.ndarray]:
    """tanh-bound and round a latent batch [..., latent_dim].

    Returns (ids [..., groups], embedding [..., latent_dim]).
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != cfg.latent_dim:
        raise ValueError(f"latent width {z.shape[-1]} != config latent_dim {cfg.latent_dim}")
    if not np.isfinite(z).all():
        raise ValueError("quantize input contains non-finite values")
    levels = cfg.level_array()
    codes = _values_to_codes(np.tanh(z), levels)
    emb = _codes_to_values(codes, levels)
    ids = _pack(codes.reshape(codes.shape[:-1] + (cfg.groups, cfg.dims_per_group)), cfg.levels)
    return ids, emb


def quantize(z, cfg: FsqConfig) -> FsqFrame:
    """Quantize a single latent vector onto the lattice."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError(f"quantize expects a 1-D latent, got shape {z.shape}")
    ids, emb = quantize_array(z, cfg)
    return FsqFrame(token_ids=ids, embedding=emb)


def quantize_ste(z: Tensor, cfg: FsqConfig) -> tuple[Tensor, np.ndarray]:
    """Training-mode quantize with straight-through gradients.

    The returned embedding equals the lattice point in value, while its
    gradient w.r.t. z equals the gradient of tanh(z) (round is bypassed).
    """
    if not np.isfinite(z.data).all():
        raise ValueError("quantize input contains non-finite values")
    bounded = z.tanh()
    levels = cfg.level_array()
    codes = _values_to_codes(bounded.data, levels)
    lattice = _codes_to_values(codes, levels).astype(z.dtype)
    ids = _pack(codes.reshape(codes.shape[:-1] + (cfg.groups, cfg.dims_per_group)), cfg.levels)
    emb = bounded + Tensor(lattice - bounded.data)
    return emb, ids


def snap_array(v, cfg: FsqConfig) -> tuple[np.ndarray, np.ndarray]:
    """Project [..., latent_dim] onto the nearest lattice points."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != cfg.latent_dim:
        raise ValueError(f"latent width {v.shape[-1]} != config latent_dim {cfg.latent_dim}")
    if not np.isfinite(v).all():
        raise ValueError("snap input contains non-finite values")
    levels = cfg.level_array()
    codes = _values_to_codes(v, levels)
    emb = _codes_to_values(codes, levels)
    ids = _pack(codes.reshape(codes.shape[:-1] + (cfg.groups, cfg.dims_per_group)), cfg.levels)
    return ids, emb


def snap(v, cfg: FsqConfig) -> FsqFrame:
    """Nearest lattice point of one latent vector (clamp, then round)."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"snap expects a 1-D latent, got shape {v.shape}")
    ids, emb = snap_array(v, cfg)
    return FsqFrame(token_ids=ids, embedding=emb)


def silence_ids(cfg: FsqConfig) -> np.ndarray:
    """Reserved pad token: the lattice point nearest the origin."""
    ids, _ = snap_array(np.zeros(cfg.latent_dim), cfg)
    return ids


# -- token-stream files -----------------------------------------------------------


@dataclass
class TokenStream:
    """A sequence of grouped token ids at a fixed frame rate."""

    ids: np.ndarray                 # [frames, groups] ints
    rate: tuple[int, int]           # frames per second as (numerator, denominator)
    cfg: FsqConfig

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        if ids.ndim != 2 or ids.shape[1] != self.cfg.groups:
            raise ValueError(f"token ids must be [frames, {self.cfg.groups}], got {ids.shape}")
        if ids.size and (ids.min() < 0 or ids.max() >= self.cfg.codebook_size):
            raise ValueError("token ids out of codebook range")
        self.ids = ids

    @property
    def num_frames(self) -> int:
        return self.ids.shape[0]

    @property
    def frames_per_second(self) -> float:
        return self.rate[0] / self.rate[1]

    def embeddings(self) -> np.ndarray:
        return ids_to_embedding(self.ids, self.cfg)


def write_tokens(path, stream: TokenStream):
    if stream.cfg.codebook_size > 0xFFFF:
        raise ValueError("token file stores u16 ids; codebook too large")
    with open(Path(path), "wb") as fh:
        fh.write(TOKEN_MAGIC)
        fh.write(struct.pack("<IIIHH", TOKEN_VERSION, stream.rate[0], stream.rate[1],
                             stream.cfg.groups, stream.cfg.dims_per_group))
        fh.write(struct.pack(f"<{stream.cfg.dims_per_group}H", *stream.cfg.levels))
        fh.write(struct.pack("<Q", stream.num_frames))
        fh.write(stream.ids.astype("<u2").tobytes())


def read_tokens(path) -> TokenStream:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != TOKEN_MAGIC:
            raise ValueError(f"{path}: bad token-stream magic {magic!r}")
        version, num, den, groups, dims = struct.unpack("<IIIHH", fh.read(16))
        if version != TOKEN_VERSION:
            raise ValueError(f"{path}: unsupported token-stream version {version}")
        levels = struct.unpack(f"<{dims}H", fh.read(2 * dims))
        (n_frames,) = struct.unpack("<Q", fh.read(8))
        ids = np.frombuffer(fh.read(2 * n_frames * groups), dtype="<u2")
        ids = ids.reshape(n_frames, groups).astype(np.int64)
    return TokenStream(ids=ids, rate=(num, den), cfg=FsqConfig(groups=groups, levels=levels))
