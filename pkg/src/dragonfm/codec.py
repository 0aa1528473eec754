"""Asymmetric neural codec: bidirectional encoder, streaming causal decoder.

Encoder: mel frames at the intermediate rate are stacked in groups, run
through a full-attention transformer at the token rate, projected to the
quantizer latent and snapped onto the FSQ lattice. Decoder: lattice
embeddings pass a causal transformer at the token rate, get upsampled to the
intermediate rate, pass a second causal transformer, and a linear head emits
inverse-STFT coefficient frames that overlap-add into the waveform.

Streaming decode consumes tokens strictly one at a time against KV caches and
an overlap-add tail, and batch decode loops through the identical per-token
path, so chunked and one-shot synthesis are bit-identical by construction.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .backbone import Backbone, KvCache, ModelConfig
from .core.attention import AttentionMask
from .core.checkpoint import read_checkpoint, write_checkpoint
from .core.nn import Linear, Module
from .core.tensor import Tensor, no_grad
from .fsq import FsqConfig, TokenStream, ids_to_embedding, quantize_array, quantize_ste
from .optim import Adam, Ema
from .signal import (
    MelConfig,
    StftConfig,
    coeffs_to_frames,
    frames_to_wave,
    l1_loss,
    mel_spectrogram,
    mel_t,
    multiscale_stft_loss,
)


@dataclass(frozen=True)
class CodecConfig:
    sample_rate: int = 48_000
    token_rate: float = 12.5
    intermediate_rate: int = 100
    fsq: FsqConfig = field(default_factory=FsqConfig)
    n_mels: int = 80
    fmin: float = 40.0
    fmax: float = 16_000.0
    enc_layers: int = 3
    enc_dim: int = 192
    enc_heads: int = 4
    enc_ffn: int = 576
    dec_token_layers: int = 1
    dec_token_dim: int = 192
    dec_frame_layers: int = 2
    dec_frame_dim: int = 128
    dec_heads: int = 4
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 0.1)

    def __post_init__(self):
        if self.sample_rate % self.intermediate_rate:
            raise ValueError(
                f"intermediate rate {self.intermediate_rate} must divide "
                f"sample rate {self.sample_rate}"
            )
        spt = self.sample_rate / self.token_rate
        if spt != int(spt):
            raise ValueError(
                f"token rate {self.token_rate} must divide sample rate {self.sample_rate}"
            )
        up = self.intermediate_rate / self.token_rate
        if up != int(up):
            raise ValueError(
                f"token rate {self.token_rate} must divide intermediate rate "
                f"{self.intermediate_rate}"
            )

    @property
    def samples_per_token(self) -> int:
        return int(self.sample_rate / self.token_rate)

    @property
    def hop(self) -> int:
        return self.sample_rate // self.intermediate_rate

    @property
    def upsample(self) -> int:
        return int(self.intermediate_rate / self.token_rate)

    @property
    def rate_fraction(self) -> tuple[int, int]:
        fr = Fraction(self.token_rate).limit_denominator(10_000)
        return fr.numerator, fr.denominator

    @property
    def synth_stft(self) -> StftConfig:
        return StftConfig(4 * self.hop, self.hop, synthesis=True)

    @property
    def mel_cfg(self) -> MelConfig:
        return MelConfig(self.sample_rate, self.n_mels, self.fmin, self.fmax,
                         StftConfig(4 * self.hop, self.hop))

    @property
    def loss_scales(self) -> tuple[StftConfig, ...]:
        base = 4 * self.hop
        return tuple(StftConfig(n, n // 4) for n in (base // 4, base // 2, base))


def default_48k() -> CodecConfig:
    return CodecConfig()


def fast_8k() -> CodecConfig:
    """Same rate ratios as the 48 kHz default, sized for fast iteration."""
    return CodecConfig(
        sample_rate=8000, fmax=3900.0, n_mels=40,
        enc_layers=2, enc_dim=128, enc_ffn=384,
        dec_token_layers=1, dec_token_dim=128,
        dec_frame_layers=2, dec_frame_dim=96,
    )


CODEC_PROFILES = {"desk48k": default_48k, "fast8k": fast_8k}


def _causal_mask(n: int, cached: int = 0) -> AttentionMask:
    allowed = np.ones((n, cached + n), dtype=bool)
    allowed[:, cached:] = np.tril(np.ones((n, n), dtype=bool))
    return AttentionMask(allowed)


class CodecEncoder(Module):
    def __init__(self, rng, cfg: CodecConfig):
        self.cfg = cfg
        mc = ModelConfig(layers=cfg.enc_layers, heads=cfg.enc_heads,
                         model_dim=cfg.enc_dim, ffn_dim=cfg.enc_ffn,
                         in_dim=cfg.upsample * cfg.n_mels, cond_dim=cfg.enc_dim)
        self.backbone = Backbone(rng, mc)
        self.head = Linear(rng, cfg.enc_dim, cfg.fsq.latent_dim)

    def latents(self, waves: np.ndarray) -> Tensor:
        """Wave [ ..., L] (L a token-period multiple) -> latents [..., T, latent]."""
        cfg = self.cfg
        mel = mel_spectrogram(waves, cfg.mel_cfg)          # [..., F, n_mels]
        f = mel.shape[-2]
        t = f // cfg.upsample
        stacked = mel[..., : t * cfg.upsample, :].reshape(
            mel.shape[:-2] + (t, cfg.upsample * cfg.n_mels)
        )
        h, _ = self.backbone.forward(Tensor(stacked.astype(np.float32)), mask=None)
        return self.head(h)


def _frame_clock(indices: np.ndarray, n_freqs: int = 24) -> np.ndarray:
    """Absolute-time Fourier features of frame indices.

    Rotary attention only encodes relative offsets, and the coefficient head
    is position-independent, so without an absolute clock the synthesis stage
    cannot emit phase-coherent oscillations across overlapping frames.
    Wavelengths run geometrically from just above Nyquist (2 frames) to 512
    frames.
    """
    lam = np.exp(np.linspace(np.log(2.05), np.log(512.0), n_freqs))
    ang = 2.0 * np.pi * indices[:, None] / lam[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1).astype(np.float32)


class CodecDecoder(Module):
    CLOCK_FREQS = 24

    def __init__(self, rng, cfg: CodecConfig):
        self.cfg = cfg
        tok_cfg = ModelConfig(layers=cfg.dec_token_layers, heads=cfg.dec_heads,
                              model_dim=cfg.dec_token_dim, ffn_dim=3 * cfg.dec_token_dim,
                              in_dim=cfg.fsq.latent_dim, cond_dim=cfg.dec_token_dim)
        frame_cfg = ModelConfig(layers=cfg.dec_frame_layers, heads=cfg.dec_heads,
                                model_dim=cfg.dec_frame_dim, ffn_dim=3 * cfg.dec_frame_dim,
                                in_dim=cfg.dec_frame_dim, cond_dim=cfg.dec_frame_dim)
        self.tok_backbone = Backbone(rng, tok_cfg)
        self.up = Linear(rng, cfg.dec_token_dim, cfg.upsample * cfg.dec_frame_dim)
        self.clock_proj = Linear(rng, 2 * self.CLOCK_FREQS, cfg.dec_frame_dim, scale=0.1)
        self.frame_backbone = Backbone(rng, frame_cfg)
        bins = cfg.synth_stft.bins
        self.coeff_head = Linear(rng, cfg.dec_frame_dim, 2 * bins)

    def coeff_frames(self, emb: Tensor, tok_cache: KvCache | None = None,
                     frame_cache: KvCache | None = None,
                     update_cache: bool = False) -> Tensor:
        """Lattice embeddings [..., T, latent] -> ISTFT coefficients [..., F, 2*bins]."""
        cfg = self.cfg
        t = emb.shape[-2]
        cached_t = tok_cache.cached_len if tok_cache is not None else 0
        h, _ = self.tok_backbone.forward(
            emb, _causal_mask(t, cached_t), cache=tok_cache, update_cache=update_cache)
        u = self.up(h)
        frames = u.reshape(u.shape[:-2] + (t * cfg.upsample, cfg.dec_frame_dim))
        cached_f = frame_cache.cached_len if frame_cache is not None else 0
        clock = _frame_clock(cached_f + np.arange(t * cfg.upsample), self.CLOCK_FREQS)
        frames = frames + self.clock_proj(Tensor(clock))
        h, _ = self.frame_backbone.forward(
            frames, _causal_mask(t * cfg.upsample, cached_f),
            cache=frame_cache, update_cache=update_cache)
        return self.coeff_head(h)


class Codec(Module):
    def __init__(self, rng_or_seed, cfg: CodecConfig):
        rng = (np.random.default_rng(rng_or_seed)
               if not isinstance(rng_or_seed, np.random.Generator) else rng_or_seed)
        self.cfg = cfg
        self.encoder = CodecEncoder(rng, cfg)
        self.decoder = CodecDecoder(rng, cfg)

    def save(self, path):
        write_checkpoint(path, self.state_dict())

    def load(self, path):
        self.load_state_dict(read_checkpoint(path))


# -- encode ---------------------------------------------------------------------


def encode(codec: Codec, wave: np.ndarray) -> TokenStream:
    """Wave -> FSQ token stream at the token rate; deterministic.

    Waves that are not a whole number of token periods are padded with
    silence; the pad amount is recorded on the returned stream.
    """
    cfg = codec.cfg
    wave = np.asarray(wave, dtype=np.float32)
    if wave.ndim != 1 or wave.size == 0:
        raise ValueError(f"encode expects a non-empty mono wave, got shape {wave.shape}")
    spt = cfg.samples_per_token
    pad = (-wave.size) % spt
    if pad:
        wave = np.concatenate([wave, np.zeros(pad, dtype=np.float32)])
    with no_grad():
        z = codec.encoder.latents(wave)
    ids, _ = quantize_array(z.data, cfg.fsq)
    stream = TokenStream(ids=ids, rate=cfg.rate_fraction, cfg=cfg.fsq)
    stream.padded_samples = pad
    return stream


# -- streaming decode --------------------------------------------------------------


class CodecState:
    """Decoder stream state: KV caches plus the pending overlap-add tail."""

    def __init__(self, codec: Codec):
        self.tok_cache = codec.decoder.tok_backbone.new_cache()
        self.frame_cache = codec.decoder.frame_backbone.new_cache()
        cfg = codec.cfg.synth_stft
        self._pad = cfg.fft_size // 2
        self._buf = np.zeros(0, dtype=np.float32)
        self.frames_done = 0
        self.emitted = 0

    def _add_frames(self, frames: np.ndarray, hop: int, fft: int):
        end = (self.frames_done + len(frames) - 1) * hop + fft
        if end > self._buf.size:
            self._buf = np.concatenate(
                [self._buf, np.zeros(end - self._buf.size, dtype=self._buf.dtype)])
        for f in frames:
            start = self.frames_done * hop
            self._buf[start:start + fft] += f
            self.frames_done += 1

    def _emit_ready(self, hop: int) -> np.ndarray:
        ready = self.frames_done * hop - self._pad  # final: no future frame reaches below
        ready = max(ready, 0)
        out = self._buf[self._pad + self.emitted: self._pad + ready]
        self.emitted = max(self.emitted, ready)
        return out.copy()

    def _emit_flush(self, hop: int) -> np.ndarray:
        total = self.frames_done * hop
        out = self._buf[self._pad + self.emitted: self._pad + total]
        self.emitted = total
        return out.copy()


def decode(codec: Codec, ids: np.ndarray, state: CodecState) -> np.ndarray:
    """Feed token ids [n, groups]; returns newly completed samples.

    Tokens are processed one at a time internally, so any call chunking
    yields bit-identical audio. Emitting token n never needs token n+1; the
    overlap-add tail (under one token period) stays pending until `flush`.
    """
    cfg = codec.cfg
    ids = np.asarray(ids)
    if ids.ndim == 1:
        ids = ids[None, :]
    emb_all = ids_to_embedding(ids, cfg.fsq).astype(np.float32)
    synth = cfg.synth_stft
    with no_grad():
        for tok in range(emb_all.shape[0]):
            coeffs = codec.decoder.coeff_frames(
                Tensor(emb_all[tok:tok + 1]),
                tok_cache=state.tok_cache, frame_cache=state.frame_cache,
                update_cache=True)
            frames = coeffs_to_frames(coeffs, synth).data
            state._add_frames(frames, synth.hop, synth.fft_size)
    return state._emit_ready(synth.hop)


def flush(codec: Codec, state: CodecState) -> np.ndarray:
    """Emit the pending overlap-add tail; total output is n_tokens * period."""
    return state._emit_flush(codec.cfg.synth_stft.hop)


def decode_all(codec: Codec, stream: TokenStream) -> np.ndarray:
    state = CodecState(codec)
    body = decode(codec, stream.ids, state)
    return np.concatenate([body, flush(codec, state)])


# -- training ----------------------------------------------------------------------


def reconstruct(codec: Codec, waves: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Differentiable round trip with straight-through quantization."""
    z = codec.encoder.latents(waves)
    emb, ids = quantize_ste(z, codec.cfg.fsq)
    coeffs = codec.decoder.coeff_frames(emb)
    frames = coeffs_to_frames(coeffs, codec.cfg.synth_stft)
    return frames_to_wave(frames, codec.cfg.synth_stft), ids


def codec_train_step(codec: Codec, waves: np.ndarray, opt: Adam,
                     ema: Ema | None = None,
                     weights: tuple[float, float, float] | None = None) -> dict:
    """One Adam update on a batch of fixed-length crops.

    loss = w0 * multiscale-STFT + w1 * L1(mel) + w2 * L1(wave). A non-finite
    loss rejects the step and reports it instead of updating.
    """
    cfg = codec.cfg
    w0, w1, w2 = weights if weights is not None else cfg.loss_weights
    waves = np.asarray(waves, dtype=np.float32)
    if waves.ndim == 1:
        waves = waves[None, :]
    if waves.shape[-1] % cfg.samples_per_token:
        raise ValueError(
            f"training crops must be whole token periods, got {waves.shape[-1]}")
    wave_hat, _ = reconstruct(codec, waves)
    target = Tensor(waves)
    ms = multiscale_stft_loss(wave_hat, target, cfg.loss_scales)
    mel_hat = mel_t(wave_hat, cfg.mel_cfg)
    mel_ref = mel_spectrogram(waves, cfg.mel_cfg)
    ml = l1_loss(mel_hat, mel_ref)
    wl = l1_loss(wave_hat, target)
    loss = w0 * ms + w1 * ml + w2 * wl
    report = {
        "msstft": float(ms.data), "mel_l1": float(ml.data),
        "wave_l1": float(wl.data), "total": float(loss.data),
        "accepted": bool(np.isfinite(loss.data)),
    }
    if not report["accepted"]:
        opt.zero_grad()
        return report
    opt.zero_grad()
    loss.backward()
    opt.step()
    if ema is not None:
        ema.update(opt.params)
    return report


# -- rate arithmetic -----------------------------------------------------------------


def bitrate(cfg: CodecConfig) -> float:
    """Information-theoretic bits per second of the token stream."""
    return cfg.token_rate * cfg.fsq.groups * float(np.log2(cfg.fsq.codebook_size))


def bitrate_report(cfg: CodecConfig, stated_bps: float | None = None) -> dict:
    """Computed bitrate, with the discrepancy against an externally stated
    figure when one is provided (we report it rather than guess its accounting)."""
    bps = bitrate(cfg)
    rep = {
        "token_rate": cfg.token_rate,
        "groups": cfg.fsq.groups,
        "codebook": cfg.fsq.codebook_size,
        "bits_per_second": bps,
    }
    if stated_bps is not None:
        rep["stated_bps"] = float(stated_bps)
        rep["discrepancy_bps"] = float(stated_bps) - bps
    return rep
