"""Corpus-aware training loops for the codec and the acoustic model."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from ..acoustic import AcousticConfig, AcousticModel, Utterance, acoustic_train_step
from ..codec import Codec, codec_train_step, encode
from ..optim import Adam, Ema
from ..signal import read_wave
from .corpus import CorpusSpec, load_corpus


def load_corpus_waves(corpus_dir, spec: CorpusSpec) -> list[dict]:
    """Records with target/prompt waves loaded and rate-checked."""
    corpus_dir = Path(corpus_dir)
    out = []
    for rec in load_corpus(corpus_dir):
        target, _ = read_wave(corpus_dir / rec["files"][0]["path"], spec.sample_rate)
        prompt, _ = read_wave(corpus_dir / rec["files"][1]["path"], spec.sample_rate)
        out.append({**rec, "target": target, "prompt": prompt})
    return out


def sample_crops(records: list[dict], crop_samples: int, batch: int,
                 rng: np.random.Generator) -> np.ndarray:
    crops = np.empty((batch, crop_samples), dtype=np.float32)
    for b in range(batch):
        rec = records[int(rng.integers(len(records)))]
        wave = rec["target"]
        lo = int(rng.integers(0, max(1, wave.size - crop_samples + 1)))
        piece = wave[lo:lo + crop_samples]
        if piece.size < crop_samples:
            piece = np.pad(piece, (0, crop_samples - piece.size))
        crops[b] = piece
    return crops


def train_codec(codec: Codec, records: list[dict], steps: int, batch: int,
                crop_tokens: int, seed: int, lr=1e-3, ema_decay: float = 0.999,
                log_every: int = 50, log=print) -> tuple[Ema, list[dict]]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0DEC]))
    opt = Adam(codec.params(), lr=lr)
    ema = Ema(opt.params, decay=ema_decay)
    crop = crop_tokens * codec.cfg.samples_per_token
    reports = []
    for step in range(steps):
        crops = sample_crops(records, crop, batch, rng)
        rep = codec_train_step(codec, crops, opt, ema)
        reports.append(rep)
        if log_every and (step % log_every == 0 or step == steps - 1):
            log(f"codec step {step:5d}  total {rep['total']:.4f}  "
                f"msstft {rep['msstft']:.4f}  mel {rep['mel_l1']:.4f}  "
                f"wave {rep['wave_l1']:.4f}")
    return ema, reports


def tokenize_corpus(codec: Codec, records: list[dict]) -> list[dict]:
    """Attach codec token ids for targets and prompts."""
    out = []
    for rec in records:
        out.append({
            **rec,
            "target_ids": encode(codec, rec["target"]).ids,
            "prompt_ids": encode(codec, rec["prompt"]).ids,
        })
    return out


def utterances_from_records(token_records: list[dict], cfg: AcousticConfig) -> list[Utterance]:
    return [
        Utterance.from_tokens(rec["text_ids"], rec["prompt_ids"], rec["target_ids"],
                              cfg.fsq, cfg.chunk_tokens)
        for rec in token_records
    ]


def train_acoustic(model: AcousticModel, utterances: list[Utterance], steps: int,
                   batch: int, seed: int, mode: str = "cfm", lr=1e-3,
                   ema_decay: float = 0.999, log_every: int = 100,
                   log=print) -> tuple[Ema, list[dict]]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xAC0]))
    opt = Adam(model.params(), lr=lr)
    ema = Ema(opt.params, decay=ema_decay)
    reports = []
    for step in range(steps):
        idx = rng.integers(0, len(utterances), size=batch)
        batch_utts = [utterances[int(i)] for i in idx]
        rep = acoustic_train_step(model, batch_utts, mode, opt, ema, rng)
        reports.append(rep)
        if log_every and (step % log_every == 0 or step == steps - 1):
            log(f"acoustic step {step:5d}  flow {rep['flow']:.4f}  "
                f"stop {rep['stop']:.4f}  total {rep['total']:.4f}")
    return ema, reports
