"""Synthetic verifiable corpus: harmonic-tone utterances.

Every symbol owns a distinct fundamental frequency from a geometric table, so
content is recoverable by matched filtering on log-mel frames; every speaker
owns a harmonic amplitude profile (plus a small base-pitch offset), so timbre
is recoverable independently of content. Symbol durations are whole token
periods, tones are cross-faded, and a calibrated noise floor covers the whole
clip. Decoding classifies active frames against per-(symbol, speaker) mel
templates and collapses runs, which stays phase-blind and survives codec
round trips.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..signal import MelConfig, StftConfig, mel_spectrogram, write_wave
from .manifest import file_entry, write_jsonl


@dataclass(frozen=True)
class SpeakerParams:
    base_pitch: float                 # Hz reference; scales the f0 table slightly
    harmonics: tuple[float, ...]      # relative amplitudes of the harmonic stack


DEFAULT_SPEAKERS = (
    SpeakerParams(427.0, (1.0, 0.06, 0.05)),
    SpeakerParams(436.0, (0.40, 1.0, 0.08)),
    SpeakerParams(444.0, (0.30, 0.12, 1.0)),
    SpeakerParams(453.0, (0.70, 0.65, 0.60)),
)


@dataclass(frozen=True)
class CorpusSpec:
    vocab_size: int = 16
    symbol_duration_s: tuple[float, float] = (0.15, 0.35)
    sample_rate: int = 8000
    token_rate: float = 12.5
    chunk_tokens: int = 25
    noise_floor: float = 1e-3
    amplitude: float = 0.3
    crossfade_s: float = 0.01
    text_len_range: tuple[int, int] = (3, 8)
    prompt_symbols: int = 3
    prompt_tokens: int = 10
    speakers: tuple[SpeakerParams, ...] = DEFAULT_SPEAKERS

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("vocab needs at least two symbols")
        spt = self.sample_rate / self.token_rate
        if spt != int(spt):
            raise ValueError(f"token rate {self.token_rate} must divide {self.sample_rate}")

    @property
    def samples_per_token(self) -> int:
        return int(self.sample_rate / self.token_rate)

    @property
    def f0_table(self) -> np.ndarray:
        """One fundamental per symbol, geometric from 200 to 1600 Hz."""
        return 200.0 * (8.0 ** (np.arange(self.vocab_size) / (self.vocab_size - 1)))

    @property
    def duration_choices_tokens(self) -> tuple[int, ...]:
        lo, hi = self.symbol_duration_s
        period = 1.0 / self.token_rate
        lo_n = max(1, int(np.ceil(lo / period - 1e-9)))
        hi_n = int(np.floor(hi / period + 1e-9))
        if hi_n < lo_n:
            raise ValueError(f"no whole token period fits in {self.symbol_duration_s}")
        return tuple(range(lo_n, hi_n + 1))

    @property
    def decode_mel(self) -> MelConfig:
        hop = self.sample_rate // 100
        return MelConfig(self.sample_rate, 64, 100.0, 3600.0, StftConfig(8 * hop, hop))

    def speaker(self, idx) -> SpeakerParams:
        return self.speakers[int(idx)]


# -- synthesis --------------------------------------------------------------------


def _tone(f0: float, n: int, sp: SpeakerParams, sr: int) -> np.ndarray:
    t = np.arange(n) / sr
    y = np.zeros(n)
    for h, amp in enumerate(sp.harmonics, start=1):
        f = h * f0
        if f < 0.45 * sr:
            y += amp * np.sin(2.0 * np.pi * f * t)
    peak = np.max(np.abs(y))
    return y / peak if peak > 0 else y


def synth_utterance(text_ids, speaker, spec: CorpusSpec, seed: int) -> np.ndarray:
    """Deterministic harmonic rendering of a symbol sequence.

    Symbols start on token boundaries; adjacent tones cross-fade with raised
    cosine ramps; the whole clip carries the calibrated noise floor.
    """
    text_ids = np.asarray(text_ids, dtype=np.int64)
    if text_ids.size and (text_ids.min() < 0 or text_ids.max() >= spec.vocab_size):
        raise ValueError(
            f"symbol ids must lie in [0, {spec.vocab_size}), got "
            f"{text_ids.min()}..{text_ids.max()}"
        )
    sp = spec.speaker(speaker) if not isinstance(speaker, SpeakerParams) else speaker
    rng = np.random.default_rng(seed)
    if text_ids.size == 0:
        return np.zeros(0, dtype=np.float32)

    spt = spec.samples_per_token
    durs = rng.choice(spec.duration_choices_tokens, size=text_ids.size) * spt
    fade = int(spec.crossfade_s * spec.sample_rate)
    total = int(durs.sum())
    out = np.zeros(total + fade, dtype=np.float64)
    scale = sp.base_pitch / 440.0
    start = 0
    for sym, dur in zip(text_ids, durs):
        n = int(dur) + fade
        y = _tone(spec.f0_table[sym] * scale, n, sp, spec.sample_rate)
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(fade) / fade)
        y[:fade] *= ramp
        y[-fade:] *= ramp[::-1]
        out[start:start + n] += y
        start += int(dur)
    out = spec.amplitude * out[:total]
    out += spec.noise_floor * rng.standard_normal(total)
    return out.astype(np.float32)


def pad_to_chunks(wave: np.ndarray, spec: CorpusSpec, rng: np.random.Generator) -> np.ndarray:
    """Extend with noise-floor silence to a whole number of chunks."""
    chunk = spec.chunk_tokens * spec.samples_per_token
    n = max(1, -(-wave.size // chunk)) * chunk
    pad = n - wave.size
    if pad == 0:
        return wave
    tail = (spec.noise_floor * rng.standard_normal(pad)).astype(np.float32)
    return np.concatenate([wave, tail])


def random_text(rng: np.random.Generator, spec: CorpusSpec,
                length: int | None = None) -> np.ndarray:
    """Symbol sequence without immediate repeats (keeps run-collapse decoding exact)."""
    if length is None:
        lo, hi = spec.text_len_range
        length = int(rng.integers(lo, hi + 1))
    out = np.empty(length, dtype=np.int64)
    prev = -1
    for i in range(length):
        c = int(rng.integers(0, spec.vocab_size - (prev >= 0)))
        if prev >= 0 and c >= prev:
            c += 1
        out[i] = c
        prev = c
    return out


# -- matched-filter decoding ---------------------------------------------------------


_TEMPLATE_CACHE: dict = {}


def _templates(spec: CorpusSpec) -> np.ndarray:
    """Z-scored mel templates [vocab, n_speakers, n_mels] of steady tones."""
    if spec in _TEMPLATE_CACHE:
        return _TEMPLATE_CACHE[spec]
    mc = spec.decode_mel
    n = 4 * mc.stft.fft_size
    temps = np.zeros((spec.vocab_size, len(spec.speakers), mc.n_mels))
    for v in range(spec.vocab_size):
        for s, sp in enumerate(spec.speakers):
            tone = spec.amplitude * _tone(spec.f0_table[v] * sp.base_pitch / 440.0,
                                          n, sp, spec.sample_rate)
            m = mel_spectrogram(tone.astype(np.float32), mc)
            temps[v, s] = _zscore(m[2:-2].mean(axis=0))
    _TEMPLATE_CACHE[spec] = temps
    return temps


def _zscore(x: np.ndarray) -> np.ndarray:
    sd = x.std()
    return (x - x.mean()) / (sd if sd > 1e-8 else 1.0)


_MIN_RUN_FRAMES = 8


def _classify_frames(wave: np.ndarray, spec: CorpusSpec):
    """Per-frame (symbol, speaker, active) matched-filter labels."""
    mc = spec.decode_mel
    if wave.size < mc.stft.fft_size:
        return np.zeros(0, int), np.zeros(0, int), np.zeros(0, bool)
    hop = mc.stft.hop
    f = wave.size // hop
    rms = np.sqrt(np.mean(
        wave[: f * hop].reshape(f, hop).astype(np.float64) ** 2, axis=1))
    active = rms > max(0.2 * rms.max(), 5.0 * spec.noise_floor)
    m = mel_spectrogram(wave, mc)[:f]
    feats = np.stack([_zscore(row) for row in m])
    temps = _templates(spec).reshape(-1, mc.n_mels)          # [V*S, M]
    sims = feats @ temps.T                                    # [F, V*S]
    best = sims.argmax(axis=1)
    n_spk = len(spec.speakers)
    return best // n_spk, best % n_spk, active


def decode_symbols(wave: np.ndarray, spec: CorpusSpec) -> list[int]:
    """Collapse per-frame symbol labels into the decoded sequence.

    Adjacent runs of the same symbol merge; the corpus never repeats a symbol
    back to back, so a brief dropout inside one tone cannot double it.
    """
    sym, _spk, active = _classify_frames(wave, spec)
    out: list[int] = []
    run_sym, run_len = -1, 0

    def emit(s: int, n: int):
        if s >= 0 and n >= _MIN_RUN_FRAMES and (not out or out[-1] != s):
            out.append(s)

    for s, a in zip(sym, active):
        cur = int(s) if a else -1
        if cur == run_sym:
            run_len += 1
        else:
            emit(run_sym, run_len)
            run_sym, run_len = cur, 1
    emit(run_sym, run_len)
    return out


def estimate_speaker(wave: np.ndarray, spec: CorpusSpec) -> int:
    """Majority speaker vote over active frames (timbre recovery)."""
    _sym, spk, active = _classify_frames(wave, spec)
    if not active.any():
        return -1
    counts = np.bincount(spk[active], minlength=len(spec.speakers))
    return int(counts.argmax())


# -- corpus building --------------------------------------------------------------------


@dataclass
class CorpusRecord:
    uid: int
    speaker: int
    text_ids: list[int]
    target_path: str
    prompt_path: str


def build_corpus(spec: CorpusSpec, n_utterances: int, seed: int, out_dir) -> list[dict]:
    """Write n records of (text, speaker, target wave, same-speaker prompt wave).

    Deterministic per (spec, n, seed); the manifest is line-delimited JSON
    with relative paths, byte sizes, and sha256 checksums.
    """
    if n_utterances < 1:
        raise ValueError("need at least one utterance")
    out_dir = Path(out_dir)
    (out_dir / "wav").mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(n_utterances):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        speaker = int(rng.integers(0, len(spec.speakers)))
        text = random_text(rng, spec)
        target = synth_utterance(text, speaker, spec, int(rng.integers(2 ** 31)))
        target = pad_to_chunks(target, spec, rng)
        prompt_text = random_text(rng, spec, length=spec.prompt_symbols)
        prompt = synth_utterance(prompt_text, speaker, spec, int(rng.integers(2 ** 31)))
        want = spec.prompt_tokens * spec.samples_per_token
        if prompt.size < want:
            tail = (spec.noise_floor * rng.standard_normal(want - prompt.size)).astype(np.float32)
            prompt = np.concatenate([prompt, tail])
        prompt = prompt[:want]
        tp = out_dir / "wav" / f"target_{i:05d}.wav"
        pp = out_dir / "wav" / f"prompt_{i:05d}.wav"
        write_wave(tp, target, spec.sample_rate)
        write_wave(pp, prompt, spec.sample_rate)
        rec = {
            "id": i,
            "speaker": speaker,
            "text_ids": [int(x) for x in text],
            "files": [file_entry(tp, out_dir), file_entry(pp, out_dir)],
        }
        records.append(rec)
    write_jsonl(out_dir / "manifest.jsonl", records)
    return records


def load_corpus(out_dir) -> list[dict]:
    out_dir = Path(out_dir)
    with open(out_dir / "manifest.jsonl") as fh:
        return [json.loads(line) for line in fh if line.strip()]
