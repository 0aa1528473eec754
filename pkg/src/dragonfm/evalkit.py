"""Inference-cost schedules, Fréchet audio distance, SNR, SER, and latency.

The schedule calculator covers three generation regimes: token-level
autoregression (one token per step), chunk autoregression (one fixed-size
block per step), and full-utterance flow matching (a single AR step whose
denoiser sees the whole utterance). Total function evaluations multiply AR
steps by per-step denoising iterations.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from math import ceil, log2
from typing import Callable, Iterable

import numpy as np

from .signal import MelConfig, mel_spectrogram


# -- cost schedules --------------------------------------------------------------


@dataclass(frozen=True)
class CostSchedule:
    name: str
    uses_cache: bool
    ar_steps: int
    nfe: int
    chunk_tokens: int
    sample_rate: int

    def __post_init__(self):
        if self.ar_steps < 1 or self.nfe < 1:
            raise ValueError(f"ar_steps and nfe must be >= 1: {self}")


def tnfe(s: CostSchedule) -> int:
    """Total function evaluations: AR steps times per-step denoise iterations."""
    return s.ar_steps * s.nfe


@dataclass(frozen=True)
class ScheduleFamily:
    """A system's cost model; `at(duration)` resolves a concrete schedule."""

    name: str
    kind: str                 # "token_ar" | "chunk_ar" | "full_utterance_fm"
    nfe: int
    uses_cache: bool
    sample_rate: int
    token_rate: float = 0.0   # tokens per second (token_ar AR rate / full_fm width)
    chunk_seconds: float = 0.0
    chunk_tokens: int = 1

    def at(self, duration_s: float) -> CostSchedule:
        if duration_s <= 0:
            raise ValueError(f"duration must be positive, got {duration_s}")
        if self.kind == "token_ar":
            ar, chunk = int(round(self.token_rate * duration_s)), 1
        elif self.kind == "chunk_ar":
            ar, chunk = ceil(duration_s / self.chunk_seconds), self.chunk_tokens
        elif self.kind == "full_utterance_fm":
            ar, chunk = 1, int(round(self.token_rate * duration_s))
        else:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        return CostSchedule(name=self.name, uses_cache=self.uses_cache,
                            ar_steps=ar, nfe=self.nfe, chunk_tokens=chunk,
                            sample_rate=self.sample_rate)


# Reference systems modeled purely as cost rows, plus this system at 2 and 4 NFE.
PAPER_FAMILIES: tuple[ScheduleFamily, ...] = (
    ScheduleFamily("E2", "full_utterance_fm", nfe=32, uses_cache=False,
                   sample_rate=24_000, token_rate=90.0),
    ScheduleFamily("VALL-E", "token_ar", nfe=1, uses_cache=True,
                   sample_rate=24_000, token_rate=75.0),
    ScheduleFamily("Dragon-FM", "chunk_ar", nfe=2, uses_cache=True,
                   sample_rate=48_000, chunk_seconds=2.0, chunk_tokens=25),
    ScheduleFamily("Dragon-FM", "chunk_ar", nfe=4, uses_cache=True,
                   sample_rate=48_000, chunk_seconds=2.0, chunk_tokens=25),
)


def schedule_table(duration_s: float,
                   families: Iterable[ScheduleFamily] = PAPER_FAMILIES) -> list[dict]:
    """Resolved schedule rows (with TNFE) for one utterance duration."""
    rows = []
    for fam in families:
        s = fam.at(duration_s)
        rows.append({
            "model": s.name, "cache": "yes" if s.uses_cache else "no",
            "tnfe": tnfe(s), "ar_steps": s.ar_steps, "nfe": s.nfe,
            "chunk_tokens": s.chunk_tokens, "sample_rate": s.sample_rate,
            "duration_s": duration_s,
        })
    return rows


# -- Fréchet audio distance ---------------------------------------------------------


@dataclass
class EmbeddingSet:
    """Per-clip embedding vectors [n, d] plus a provenance tag."""

    vectors: np.ndarray
    source: str = ""

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"embeddings must be [n, d], got shape {v.shape}")
        self.vectors = v

    @property
    def shrinkage_flagged(self) -> bool:
        n, d = self.vectors.shape
        return n < d + 1


_SHRINKAGE = 1e-6


def _gaussian_fit(vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = vectors.mean(axis=0)
    n, d = vectors.shape
    if n > 1:
        cov = np.cov(vectors, rowvar=False).reshape(d, d)
    else:
        cov = np.zeros((d, d))
    return mu, cov + _SHRINKAGE * np.eye(d)


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    """Symmetric eigendecomposition square root, negative eigenvalues clamped."""
    vals, vecs = np.linalg.eigh((m + m.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fad(a: EmbeddingSet | np.ndarray, b: EmbeddingSet | np.ndarray) -> float:
    """Fréchet distance between Gaussian fits of two embedding sets."""
    va = a.vectors if isinstance(a, EmbeddingSet) else EmbeddingSet(a).vectors
    vb = b.vectors if isinstance(b, EmbeddingSet) else EmbeddingSet(b).vectors
    if va.shape[1] != vb.shape[1]:
        raise ValueError(f"embedding dims differ: {va.shape[1]} vs {vb.shape[1]}")
    mu_a, cov_a = _gaussian_fit(va)
    mu_b, cov_b = _gaussian_fit(vb)
    sa = _psd_sqrt(cov_a)
    cross = _psd_sqrt(sa @ cov_b @ sa)
    d2 = float(((mu_a - mu_b) ** 2).sum()
               + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(cross))
    return max(d2, 0.0)


def clip_embedding(wave: np.ndarray, mel_cfg: MelConfig) -> np.ndarray:
    """Log-mel statistics pooling: per-band mean and standard deviation."""
    m = mel_spectrogram(np.asarray(wave, dtype=np.float32), mel_cfg)
    return np.concatenate([m.mean(axis=0), m.std(axis=0)])


def embed_clips(waves: Iterable[np.ndarray], mel_cfg: MelConfig,
                source: str = "") -> EmbeddingSet:
    return EmbeddingSet(np.stack([clip_embedding(w, mel_cfg) for w in waves]),
                        source=source)


# -- waveform metrics ------------------------------------------------------------------


SNR_CAP_DB = 120.0


def snr(reference: np.ndarray, test: np.ndarray) -> float:
    """20 log10(|ref| / |ref - test|) in dB, capped at 120."""
    reference = np.asarray(reference, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if reference.shape != test.shape:
        raise ValueError(f"length mismatch: {reference.shape} vs {test.shape}")
    ref_norm = np.linalg.norm(reference)
    if ref_norm == 0.0:
        raise ValueError("SNR reference is identically zero")
    err = np.linalg.norm(reference - test)
    if err == 0.0:
        return SNR_CAP_DB
    return min(20.0 * np.log10(ref_norm / err), SNR_CAP_DB)


def edit_distance(a, b) -> int:
    a, b = list(a), list(b)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]


def symbol_error_rate(wave: np.ndarray, reference_symbols, corpus_spec) -> float:
    """Matched-filter decode of the wave, then edit distance / reference length."""
    reference_symbols = list(reference_symbols)
    if not reference_symbols:
        raise ValueError("reference symbol sequence is empty")
    from .harness.corpus import decode_symbols
    decoded = decode_symbols(np.asarray(wave, dtype=np.float32), corpus_spec)
    return edit_distance(decoded, reference_symbols) / len(reference_symbols)


# -- latency / RTF ------------------------------------------------------------------------


@dataclass
class LatencyReport:
    first_chunk_s: float
    rtf: float
    total_s: float
    audio_s: float
    tnfe_observed: int
    repeats: int


def measure_latency_rtf(make_runner: Callable[[], object], repeats: int = 3,
                        warmup: int = 1) -> LatencyReport:
    """Median wall-clock first-chunk latency and real-time factor.

    `make_runner()` must return a fresh iterable of audio sample arrays with
    `sample_rate` and (after exhaustion) `denoiser_calls` attributes. Runs on
    the calling thread; warm-up iterations are excluded from the medians.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    for _ in range(warmup):
        runner = make_runner()
        for _chunk in runner:
            pass
    firsts, totals, calls, audio_s = [], [], 0, 0.0
    for _ in range(repeats):
        runner = make_runner()
        n_samples = 0
        first = None
        t0 = time.perf_counter()
        for chunk in runner:
            if first is None and len(chunk):
                first = time.perf_counter() - t0
            n_samples += len(chunk)
        total = time.perf_counter() - t0
        firsts.append(first if first is not None else total)
        totals.append(total)
        calls = getattr(runner, "denoiser_calls", 0)
        audio_s = n_samples / runner.sample_rate
    return LatencyReport(
        first_chunk_s=float(np.median(firsts)),
        rtf=float(np.median(totals) / audio_s) if audio_s else float("inf"),
        total_s=float(np.median(totals)),
        audio_s=audio_s,
        tnfe_observed=calls,
        repeats=repeats,
    )


# -- plots ----------------------------------------------------------------------------------


def plot_tnfe(durations: Iterable[float], path,
              families: Iterable[ScheduleFamily] = PAPER_FAMILIES):
    """TNFE vs duration per schedule family, written as an SVG."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    durations = sorted(durations)
    fig, ax = plt.subplots(figsize=(6, 4))
    for fam in families:
        label = f"{fam.name} (nfe {fam.nfe})"
        ax.plot(durations, [tnfe(fam.at(d)) for d in durations], marker="o", label=label)
    ax.set_xlabel("utterance duration (s)")
    ax.set_ylabel("TNFE")
    ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
