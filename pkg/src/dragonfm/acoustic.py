"""Chunk-autoregressive acoustic model with within-chunk flow matching.

Training uses a two-track layout: every chunk appears once as clean context
(attendable by later chunks, exactly as at inference) and once as a noisy
denoise copy carrying its own (t, r) conditioning. One forward pass therefore
trains all chunks in parallel while preserving KV-cache semantics.

Generation encodes text and the speaker prompt into the cache once, then per
chunk: sample noise, run the configured sampler against the denoise mask,
snap the result onto the FSQ lattice, re-encode the snapped chunk through the
context track (appending to the cache), and consult the stop head.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backbone import (
    Backbone,
    ModelConfig,
    SequenceLayout,
    TimeEmbedding,
    build_context_mask,
)
from .core.attention import AttentionMask
from .core.checkpoint import read_checkpoint, write_checkpoint
from .core.nn import Embedding, LayerNorm, Linear, Module
from .core.tensor import Tensor, concat, maximum, narrow, no_grad, sigmoid
from .flow import SamplerConfig, cfm_pair, euler_sample, meanflow_sample, sample_time_pair
from .fsq import FsqConfig, ids_to_embedding, silence_ids, snap_array
from .optim import Adam, Ema


@dataclass(frozen=True)
class AcousticConfig:
    layers: int = 6
    heads: int = 4
    model_dim: int = 256
    ffn_dim: int = 768
    text_vocab: int = 17
    fsq: FsqConfig = field(default_factory=FsqConfig)
    chunk_tokens: int = 25
    stop_threshold: float = 0.5
    stop_loss_weight: float = 1.0
    zero_init_modulation: bool = True
    max_positions: int = 8192

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            layers=self.layers, heads=self.heads, model_dim=self.model_dim,
            ffn_dim=self.ffn_dim, in_dim=self.model_dim, cond_dim=self.model_dim,
            text_vocab=self.text_vocab, latent_dim=self.fsq.latent_dim,
            max_positions=self.max_positions,
            zero_init_modulation=self.zero_init_modulation,
        )


@dataclass
class Utterance:
    """Text, speaker-prompt tokens, and chunk-padded target tokens."""

    text_ids: np.ndarray        # [text_len]
    prompt_ids: np.ndarray      # [prompt_len, groups]
    target_ids: np.ndarray      # [num_chunks * chunk_tokens, groups], padded
    pad_mask: np.ndarray        # [num_chunks * chunk_tokens] True on real tokens
    layout: SequenceLayout

    @classmethod
    def from_tokens(cls, text_ids, prompt_ids, target_ids, fsq: FsqConfig,
                    chunk_tokens: int = 25) -> "Utterance":
        text_ids = np.asarray(text_ids, dtype=np.int64)
        prompt_ids = np.atleast_2d(np.asarray(prompt_ids, dtype=np.int64))
        target_ids = np.atleast_2d(np.asarray(target_ids, dtype=np.int64))
        n = target_ids.shape[0]
        if n == 0:
            raise ValueError("utterance needs at least one target token")
        chunks = -(-n // chunk_tokens)
        pad = chunks * chunk_tokens - n
        mask = np.ones(chunks * chunk_tokens, dtype=bool)
        if pad:
            filler = np.tile(silence_ids(fsq), (pad, 1))
            target_ids = np.concatenate([target_ids, filler])
            mask[n:] = False
        layout = SequenceLayout(text_len=len(text_ids), prompt_len=prompt_ids.shape[0],
                                chunk_tokens=chunk_tokens, num_chunks=chunks)
        return cls(text_ids=text_ids, prompt_ids=prompt_ids,
                   target_ids=target_ids, pad_mask=mask, layout=layout)


@dataclass
class GenerationResult:
    token_ids: np.ndarray            # [frames, groups], every frame on-lattice
    embeddings: np.ndarray           # [frames, latent_dim]
    chunks_emitted: int
    nfe_per_chunk: list[int]
    stop_trace: list[float]
    denoiser_calls: int


class AcousticModel(Module):
    def __init__(self, rng_or_seed, cfg: AcousticConfig):
        rng = (np.random.default_rng(rng_or_seed)
               if not isinstance(rng_or_seed, np.random.Generator) else rng_or_seed)
        self.cfg = cfg
        d = cfg.model_dim
        self.text_emb = Embedding(rng, cfg.text_vocab, d)
        self.ctx_proj = Linear(rng, cfg.fsq.latent_dim, d)
        self.den_proj = Linear(rng, cfg.fsq.latent_dim, d)
        self.time_emb = TimeEmbedding(rng, cond_dim=d)
        self.backbone = Backbone(rng, cfg.model_config())
        self.out_norm = LayerNorm(d)
        self.out_head = Linear(rng, d, cfg.fsq.latent_dim)
        self.stop_head = Linear(rng, d, 1)

    # -- embedding helpers ---------------------------------------------------

    def prefix_rows(self, utt_text: np.ndarray, prompt_ids: np.ndarray) -> Tensor:
        parts = []
        if len(utt_text):
            parts.append(self.text_emb(np.asarray(utt_text, dtype=np.int64)))
        if prompt_ids.shape[0]:
            lat = ids_to_embedding(prompt_ids, self.cfg.fsq).astype(np.float32)
            parts.append(self.ctx_proj(Tensor(lat)))
        if not parts:
            return Tensor(np.zeros((0, self.cfg.model_dim), dtype=np.float32))
        return parts[0] if len(parts) == 1 else concat(parts, axis=0)

    def field_from_hidden(self, hidden: Tensor) -> Tensor:
        return self.out_head(self.out_norm(hidden))

    def stop_probability(self, chunk_hidden: Tensor) -> float:
        """Mean-pool one chunk's context states -> linear head -> sigmoid."""
        pooled = chunk_hidden.mean(axis=-2).reshape(1, -1)
        return float(sigmoid(self.stop_head(pooled)).data)

    def stop_logits(self, hidden: Tensor, layout: SequenceLayout) -> Tensor:
        logits = []
        for k in range(layout.num_chunks):
            seg = _rows(hidden, layout.chunk_start(k), layout.chunk_tokens)
            logits.append(self.stop_head(seg.mean(axis=-2).reshape(1, -1)))
        return concat(logits, axis=0).reshape(-1)

    def save(self, path):
        write_checkpoint(path, self.state_dict())

    def load(self, path):
        self.load_state_dict(read_checkpoint(path))


def _rows(x: Tensor, start: int, length: int) -> Tensor:
    return narrow(x, -2, start, length)


# -- training layout ------------------------------------------------------------


def build_training_layout(layout: SequenceLayout) -> tuple[AttentionMask, np.ndarray]:
    """Joint mask and positions for the two-track sequence.

    Row/column order is [context track | denoise track]. Context rows follow
    the block-causal context mask and never see the denoise track. Denoise
    rows of chunk k see the prefix, clean chunks < k, and their own noisy
    block; they never see chunk k's clean copy or anything later.
    """
    nc = layout.total_context
    c = layout.chunk_tokens
    k = layout.num_chunks
    n = nc + k * c
    allowed = np.zeros((n, n), dtype=bool)
    allowed[:nc, :nc] = build_context_mask(layout).allowed
    blk = layout.block_ids()
    for j in range(k):
        r0 = nc + j * c
        allowed[r0:r0 + c, :nc] = (blk == -1) | (blk < j)
        allowed[r0:r0 + c, r0:r0 + c] = True
    positions = np.concatenate([
        np.arange(nc),
        np.concatenate([layout.chunk_start(j) + np.arange(c) for j in range(k)])
        if k else np.zeros(0, dtype=np.int64),
    ])
    return AttentionMask(allowed), positions.astype(np.int64)


@dataclass
class _ChunkDraw:
    t: float
    r: float
    x0: np.ndarray
    x_t: np.ndarray
    v_target: np.ndarray


def _draw_chunks(model: AcousticModel, utt: Utterance, rng: np.random.Generator,
                 p_instant: float, force_r_eq_t: bool) -> list[_ChunkDraw]:
    lat = ids_to_embedding(utt.target_ids, model.cfg.fsq).astype(np.float32)
    draws = []
    c = utt.layout.chunk_tokens
    for k in range(utt.layout.num_chunks):
        x1 = lat[k * c:(k + 1) * c]
        t, r = sample_time_pair(rng, p_instant)
        if force_r_eq_t:
            r = t
        x0 = rng.standard_normal(x1.shape).astype(np.float32)
        x_t, v = cfm_pair(x1, x0, t)
        draws.append(_ChunkDraw(t=t, r=r, x0=x0, x_t=x_t.astype(np.float32),
                                v_target=v.astype(np.float32)))
    return draws


def _assemble(model: AcousticModel, utt: Utterance, draws: list[_ChunkDraw],
              den_states: list[np.ndarray] | None = None,
              times: list[tuple[float, float]] | None = None):
    """Input rows and conditioning for the two-track pass."""
    lay = utt.layout
    c = lay.chunk_tokens
    ctx_lat = ids_to_embedding(utt.target_ids, model.cfg.fsq).astype(np.float32)
    rows = [model.prefix_rows(utt.text_ids, utt.prompt_ids),
            model.ctx_proj(Tensor(ctx_lat))]
    cond_dim = model.cfg.model_dim
    cond = [Tensor(np.zeros((lay.total_context, cond_dim), dtype=np.float32))]
    ones = Tensor(np.ones((c, 1), dtype=np.float32))
    for k, d in enumerate(draws):
        x = den_states[k] if den_states is not None else d.x_t
        t, r = times[k] if times is not None else (d.t, d.r)
        rows.append(model.den_proj(Tensor(x.astype(np.float32))))
        cond.append(ones @ model.time_emb(t, r))
    return concat(rows, axis=0), concat(cond, axis=0)


def acoustic_train_step(model: AcousticModel, batch: list[Utterance], mode: str,
                        opt: Adam, ema: Ema | None, rng: np.random.Generator,
                        p_instant: float = 0.5, force_r_eq_t: bool = False,
                        fd_step: float = 1e-3) -> dict:
    """One optimizer update over a batch of utterances.

    loss = flow MSE over every chunk's denoise track (padding positions
    masked out) + stop-head BCE on per-chunk pooled context states. In
    meanflow mode the regression target subtracts (t - r) times the model's
    total time derivative, estimated from two extra no-grad passes; chunks
    with r = t take the plain flow-matching target exactly.
    """
    if mode not in ("cfm", "meanflow"):
        raise ValueError(f"unknown training mode {mode!r}")
    total = None
    flow_val = stop_val = 0.0
    for utt in batch:
        lay = utt.layout
        c = lay.chunk_tokens
        # plain flow matching conditions on the zero interval (t, t)
        draws = _draw_chunks(model, utt, rng, p_instant,
                             force_r_eq_t or mode == "cfm")
        mask, positions = build_training_layout(lay)

        targets = [d.v_target for d in draws]
        if mode == "meanflow" and any(d.r < d.t for d in draws):
            targets = _meanflow_targets(model, utt, draws, mask, positions, fd_step)

        rows, cond = _assemble(model, utt, draws)
        hidden, _ = model.backbone.forward(rows, mask, t_cond=cond, positions=positions)
        pred = model.field_from_hidden(_rows(hidden, lay.total_context, lay.num_chunks * c))

        w = np.repeat(utt.pad_mask.astype(np.float32)[:, None], model.cfg.fsq.latent_dim, 1)
        diff = pred - Tensor(np.concatenate(targets))
        flow = (diff * diff * Tensor(w)).sum() * (1.0 / max(w.sum(), 1.0))

        logits = model.stop_logits(_rows(hidden, 0, lay.total_context), lay)
        is_final = np.zeros(lay.num_chunks, dtype=np.float32)
        is_final[-1] = 1.0
        stop = _bce(logits, is_final)

        loss = flow + model.cfg.stop_loss_weight * stop
        flow_val += float(flow.data)
        stop_val += float(stop.data)
        total = loss if total is None else total + loss
    total = total * (1.0 / len(batch))
    report = {
        "flow": flow_val / len(batch), "stop": stop_val / len(batch),
        "total": float(total.data), "accepted": bool(np.isfinite(total.data)),
        "lr": opt.current_lr(),
    }
    if not report["accepted"]:
        opt.zero_grad()
        return report
    opt.zero_grad()
    total.backward()
    opt.step()
    if ema is not None:
        ema.update(opt.params)
    return report


def _bce(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Stable binary cross-entropy from logits."""
    t = Tensor(targets.astype(np.float32))
    return (maximum(logits, 0.0) - logits * t + ((-logits.abs()).exp() + 1.0).log()).mean()


def _meanflow_targets(model: AcousticModel, utt: Utterance, draws: list[_ChunkDraw],
                      mask: AttentionMask, positions: np.ndarray,
                      fd_step: float) -> list[np.ndarray]:
    """Per-chunk mean-flow targets from one central-difference pass pair.

    Chunk denoise tracks are mutually masked, so all chunks can be perturbed
    simultaneously; the probe step shrinks per chunk to stay inside r <= t <= 1.
    """
    lay = utt.layout
    c = lay.chunk_tokens
    h_eff, states_up, states_dn, times_up, times_dn = [], [], [], [], []
    for d in draws:
        h = min(fd_step, d.t - d.r, 1.0 - d.t) if d.r < d.t else 0.0
        h = h if h > 1e-9 else 0.0
        h_eff.append(h)
        states_up.append(d.x_t + h * d.v_target)
        states_dn.append(d.x_t - h * d.v_target)
        times_up.append((d.t + h, d.r))
        times_dn.append((d.t - h, d.r))
    with no_grad():
        pu = _den_pass(model, utt, draws, mask, positions, states_up, times_up)
        pd = _den_pass(model, utt, draws, mask, positions, states_dn, times_dn)
    targets = []
    for k, d in enumerate(draws):
        if h_eff[k] == 0.0:
            targets.append(d.v_target)
        else:
            du = (pu[k] - pd[k]) / (2.0 * h_eff[k])
            targets.append((d.v_target - (d.t - d.r) * du).astype(np.float32))
    return targets


def _den_pass(model, utt, draws, mask, positions, states, times) -> list[np.ndarray]:
    lay = utt.layout
    c = lay.chunk_tokens
    rows, cond = _assemble(model, utt, draws, den_states=states, times=times)
    hidden, _ = model.backbone.forward(rows, mask, t_cond=cond, positions=positions)
    pred = model.field_from_hidden(_rows(hidden, lay.total_context, lay.num_chunks * c))
    return [pred.data[k * c:(k + 1) * c] for k in range(lay.num_chunks)]


# -- generation -----------------------------------------------------------------


def _chunk_stream(model: AcousticModel, text_ids, prompt_ids, max_chunks: int,
                  sampler: SamplerConfig, seed: int, use_cache: bool,
                  counter: dict):
    """Yields (ids, embedding, stop_probability) per generated chunk."""
    cfg = model.cfg
    c = cfg.chunk_tokens
    d = cfg.model_dim
    rng = np.random.default_rng(seed)
    text_ids = np.asarray(text_ids, dtype=np.int64)
    prompt_ids = np.atleast_2d(np.asarray(prompt_ids, dtype=np.int64)) \
        if np.asarray(prompt_ids).size else np.zeros((0, cfg.fsq.groups), dtype=np.int64)
    prefix_len = len(text_ids) + prompt_ids.shape[0]
    emitted_emb: list[np.ndarray] = []

    with no_grad():
        prefix = model.prefix_rows(text_ids, prompt_ids)
        cache = None
        if use_cache:
            cache = model.backbone.new_cache()
            if prefix_len:
                _, cache = model.backbone.forward(
                    prefix, AttentionMask.full(prefix_len, prefix_len),
                    cache=cache, update_cache=True, positions=np.arange(prefix_len))

        for k in range(max_chunks):
            z0 = rng.standard_normal((c, cfg.fsq.latent_dim)).astype(np.float32)
            pos_k = prefix_len + k * c + np.arange(c)

            def u_fn(z, r, t, _ctx=None, _k=k, _pos=pos_k):
                counter["calls"] += 1
                cond = Tensor(np.ones((c, 1), dtype=np.float32)) @ model.time_emb(t, r)
                den = model.den_proj(Tensor(z.astype(np.float32)))
                if use_cache:
                    mask = AttentionMask.full(c, cache.cached_len + c)
                    hidden, _ = model.backbone.forward(
                        den, mask, t_cond=cond, cache=cache,
                        update_cache=False, positions=_pos)
                    h_den = hidden
                else:
                    hidden, h_den = _uncached_den_pass(
                        model, prefix, emitted_emb, den, cond, _k, prefix_len)
                return model.field_from_hidden(h_den).data

            if sampler.mode == "euler_cfm":
                z1 = euler_sample(lambda z, t, ctx: u_fn(z, t, t), z0, sampler)
            else:
                z1 = meanflow_sample(u_fn, z0, sampler)

            ids, emb = snap_array(z1, cfg.fsq)
            emb = emb.astype(np.float32)
            emitted_emb.append(emb)

            ctx_rows = model.ctx_proj(Tensor(emb))
            if use_cache:
                hidden, cache = model.backbone.forward(
                    ctx_rows, AttentionMask.full(c, cache.cached_len + c),
                    cache=cache, update_cache=True, positions=pos_k)
                chunk_hidden = hidden
            else:
                chunk_hidden = _uncached_ctx_pass(model, prefix, emitted_emb, prefix_len)
            p_stop = model.stop_probability(chunk_hidden)
            yield ids, emb, p_stop
            if p_stop > cfg.stop_threshold:
                return


def _uncached_den_pass(model, prefix, emitted_emb, den, cond, k, prefix_len):
    """Full-recompute oracle: rebuild the whole context for one denoise call."""
    c = model.cfg.chunk_tokens
    parts = [prefix] if prefix_len else []
    for e in emitted_emb[:k]:
        parts.append(model.ctx_proj(Tensor(e)))
    parts.append(den)
    rows = concat(parts, axis=0) if len(parts) > 1 else parts[0]
    n_ctx = prefix_len + k * c
    lay = SequenceLayout(text_len=prefix_len, prompt_len=0, chunk_tokens=c, num_chunks=k)
    allowed = np.zeros((n_ctx + c, n_ctx + c), dtype=bool)
    allowed[:n_ctx, :n_ctx] = build_context_mask(lay).allowed
    allowed[n_ctx:, :n_ctx] = True
    allowed[n_ctx:, n_ctx:] = True
    zeros = Tensor(np.zeros((n_ctx, model.cfg.model_dim), dtype=np.float32))
    cond_all = concat([zeros, cond], axis=0)
    positions = np.arange(n_ctx + c)
    hidden, _ = model.backbone.forward(rows, AttentionMask(allowed),
                                       t_cond=cond_all, positions=positions)
    return hidden, _rows(hidden, n_ctx, c)


def _uncached_ctx_pass(model, prefix, emitted_emb, prefix_len):
    c = model.cfg.chunk_tokens
    k = len(emitted_emb)
    parts = [prefix] if prefix_len else []
    for e in emitted_emb:
        parts.append(model.ctx_proj(Tensor(e)))
    rows = concat(parts, axis=0) if len(parts) > 1 else parts[0]
    lay = SequenceLayout(text_len=prefix_len, prompt_len=0, chunk_tokens=c, num_chunks=k)
    hidden, _ = model.backbone.forward(rows, build_context_mask(lay),
                                       positions=np.arange(lay.total_context))
    return _rows(hidden, lay.total_context - c, c)


def generate(model: AcousticModel, text_ids, prompt_ids, max_chunks: int,
             sampler: SamplerConfig, seed: int, use_cache: bool = True) -> GenerationResult:
    """Autoregressive chunk generation; deterministic for a fixed seed."""
    if max_chunks < 1:
        raise ValueError(f"max_chunks must be >= 1, got {max_chunks}")
    counter = {"calls": 0}
    ids_list, emb_list, trace = [], [], []
    for ids, emb, p in _chunk_stream(model, text_ids, prompt_ids, max_chunks,
                                     sampler, seed, use_cache, counter):
        ids_list.append(ids)
        emb_list.append(emb)
        trace.append(p)
    n = len(ids_list)
    return GenerationResult(
        token_ids=np.concatenate(ids_list) if n else np.zeros((0, model.cfg.fsq.groups), int),
        embeddings=np.concatenate(emb_list) if n else np.zeros((0, model.cfg.fsq.latent_dim)),
        chunks_emitted=n,
        nfe_per_chunk=[sampler.nfe] * n,
        stop_trace=trace,
        denoiser_calls=counter["calls"],
    )


def generate_full_fm(model: AcousticModel, text_ids, prompt_ids, num_chunks: int,
                     sampler: SamplerConfig, seed: int) -> GenerationResult:
    """Full-utterance flow-matching baseline on the same backbone.

    All chunks denoise jointly with bidirectional attention over the whole
    utterance (one AR step); no audio exists until sampling finishes.
    """
    cfg = model.cfg
    c = cfg.chunk_tokens
    n = num_chunks * c
    rng = np.random.default_rng(seed)
    text_ids = np.asarray(text_ids, dtype=np.int64)
    prompt_ids = np.atleast_2d(np.asarray(prompt_ids, dtype=np.int64)) \
        if np.asarray(prompt_ids).size else np.zeros((0, cfg.fsq.groups), dtype=np.int64)
    prefix_len = len(text_ids) + prompt_ids.shape[0]
    counter = {"calls": 0}
    with no_grad():
        prefix = model.prefix_rows(text_ids, prompt_ids)
        allowed = np.ones((prefix_len + n, prefix_len + n), dtype=bool)
        allowed[:prefix_len, prefix_len:] = False
        mask = AttentionMask(allowed)
        positions = np.arange(prefix_len + n)
        zeros = Tensor(np.zeros((prefix_len, cfg.model_dim), dtype=np.float32))

        def u_fn(z, r, t, _ctx=None):
            counter["calls"] += 1
            den_cond = Tensor(np.ones((n, 1), dtype=np.float32)) @ model.time_emb(t, r)
            den_rows = model.den_proj(Tensor(z.astype(np.float32)))
            if prefix_len:
                rows = concat([prefix, den_rows], axis=0)
                cond = concat([zeros, den_cond], axis=0)
            else:
                rows, cond = den_rows, den_cond
            hidden, _ = model.backbone.forward(rows, mask, t_cond=cond, positions=positions)
            return model.field_from_hidden(_rows(hidden, prefix_len, n)).data

        z0 = rng.standard_normal((n, cfg.fsq.latent_dim)).astype(np.float32)
        if sampler.mode == "euler_cfm":
            z1 = euler_sample(lambda z, t, ctx: u_fn(z, t, t), z0, sampler)
        else:
            z1 = meanflow_sample(u_fn, z0, sampler)
        ids, emb = snap_array(z1, cfg.fsq)
    return GenerationResult(token_ids=ids, embeddings=emb.astype(np.float32),
                            chunks_emitted=num_chunks, nfe_per_chunk=[sampler.nfe],
                            stop_trace=[], denoiser_calls=counter["calls"])


# -- streaming synthesis runners (audio out, for latency measurement) -------------


class ChunkSynthRunner:
    """Chunk-AR generation interleaved with streaming codec decode."""

    def __init__(self, model, codec, text_ids, prompt_ids, sampler: SamplerConfig,
                 seed: int, max_chunks: int):
        from . import codec as codec_mod
        self._codec_mod = codec_mod
        self.model, self.codec = model, codec
        self.args = (text_ids, prompt_ids, max_chunks, sampler, seed)
        self.sample_rate = codec.cfg.sample_rate
        self.denoiser_calls = 0

    def __iter__(self):
        text_ids, prompt_ids, max_chunks, sampler, seed = self.args
        counter = {"calls": 0}
        state = self._codec_mod.CodecState(self.codec)
        for ids, _emb, _p in _chunk_stream(self.model, text_ids, prompt_ids,
                                           max_chunks, sampler, seed, True, counter):
            yield self._codec_mod.decode(self.codec, ids, state)
        tail = self._codec_mod.flush(self.codec, state)
        self.denoiser_calls = counter["calls"]
        if tail.size:
            yield tail


class FullFmSynthRunner:
    """Full-utterance flow matching; first audio appears only at the end."""

    def __init__(self, model, codec, text_ids, prompt_ids, sampler: SamplerConfig,
                 seed: int, num_chunks: int):
        from . import codec as codec_mod
        self._codec_mod = codec_mod
        self.model, self.codec = model, codec
        self.args = (text_ids, prompt_ids, num_chunks, sampler, seed)
        self.sample_rate = codec.cfg.sample_rate
        self.denoiser_calls = 0

    def __iter__(self):
        text_ids, prompt_ids, num_chunks, sampler, seed = self.args
        res = generate_full_fm(self.model, text_ids, prompt_ids, num_chunks, sampler, seed)
        self.denoiser_calls = res.denoiser_calls
        c = self.model.cfg.chunk_tokens
        state = self._codec_mod.CodecState(self.codec)
        for k in range(res.chunks_emitted):
            yield self._codec_mod.decode(self.codec, res.token_ids[k * c:(k + 1) * c], state)
        tail = self._codec_mod.flush(self.codec, state)
        if tail.size:
            yield tail
