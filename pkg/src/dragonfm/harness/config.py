"""Versioned plain-text `key = value` configs.

Every run serializes its full configuration into the output directory, so
nothing depends on defaults hidden in code. Tuples are comma-separated;
speaker entries use indexed keys.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from ..acoustic import AcousticConfig
from ..codec import CodecConfig
from ..fsq import FsqConfig
from .corpus import CorpusSpec, SpeakerParams

CONFIG_VERSION = 1


def parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {ln}: expected 'key = value', got {line!r}")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def format_kv(d: dict) -> str:
    lines = [f"config_version = {CONFIG_VERSION}"]
    for k in sorted(d):
        if k == "config_version":
            continue
        lines.append(f"{k} = {d[k]}")
    return "\n".join(lines) + "\n"


def load_kv(path) -> dict[str, str]:
    d = parse_kv(Path(path).read_text())
    ver = int(d.pop("config_version", "1"))
    if ver != CONFIG_VERSION:
        raise ValueError(f"{path}: unsupported config version {ver}")
    return d


def save_kv(path, d: dict):
    Path(path).write_text(format_kv(d))


def _tuple(val: str, cast=float) -> tuple:
    return tuple(cast(x) for x in val.split(",") if x.strip() != "")


def _fmt_tuple(t) -> str:
    return ",".join(str(x) for x in t)


# -- codec ---------------------------------------------------------------------


def codec_to_kv(cfg: CodecConfig) -> dict:
    return {
        "kind": "codec",
        "sample_rate": cfg.sample_rate,
        "token_rate": cfg.token_rate,
        "intermediate_rate": cfg.intermediate_rate,
        "fsq.groups": cfg.fsq.groups,
        "fsq.levels": _fmt_tuple(cfg.fsq.levels),
        "n_mels": cfg.n_mels,
        "fmin": cfg.fmin,
        "fmax": cfg.fmax,
        "enc_layers": cfg.enc_layers,
        "enc_dim": cfg.enc_dim,
        "enc_heads": cfg.enc_heads,
        "enc_ffn": cfg.enc_ffn,
        "dec_token_layers": cfg.dec_token_layers,
        "dec_token_dim": cfg.dec_token_dim,
        "dec_frame_layers": cfg.dec_frame_layers,
        "dec_frame_dim": cfg.dec_frame_dim,
        "dec_heads": cfg.dec_heads,
        "loss_weights": _fmt_tuple(cfg.loss_weights),
    }


def codec_from_kv(d: dict) -> CodecConfig:
    if d.get("kind", "codec") != "codec":
        raise ValueError(f"not a codec config (kind={d.get('kind')!r})")
    return CodecConfig(
        sample_rate=int(d["sample_rate"]),
        token_rate=float(d["token_rate"]),
        intermediate_rate=int(d["intermediate_rate"]),
        fsq=FsqConfig(groups=int(d["fsq.groups"]), levels=_tuple(d["fsq.levels"], int)),
        n_mels=int(d["n_mels"]),
        fmin=float(d["fmin"]),
        fmax=float(d["fmax"]),
        enc_layers=int(d["enc_layers"]),
        enc_dim=int(d["enc_dim"]),
        enc_heads=int(d["enc_heads"]),
        enc_ffn=int(d["enc_ffn"]),
        dec_token_layers=int(d["dec_token_layers"]),
        dec_token_dim=int(d["dec_token_dim"]),
        dec_frame_layers=int(d["dec_frame_layers"]),
        dec_frame_dim=int(d["dec_frame_dim"]),
        dec_heads=int(d["dec_heads"]),
        loss_weights=_tuple(d["loss_weights"], float),
    )


# -- acoustic -------------------------------------------------------------------


def acoustic_to_kv(cfg: AcousticConfig, token_rate: float) -> dict:
    return {
        "kind": "acoustic",
        "layers": cfg.layers,
        "heads": cfg.heads,
        "model_dim": cfg.model_dim,
        "ffn_dim": cfg.ffn_dim,
        "text_vocab": cfg.text_vocab,
        "fsq.groups": cfg.fsq.groups,
        "fsq.levels": _fmt_tuple(cfg.fsq.levels),
        "chunk_tokens": cfg.chunk_tokens,
        "stop_threshold": cfg.stop_threshold,
        "stop_loss_weight": cfg.stop_loss_weight,
        "token_rate": token_rate,
    }


def acoustic_from_kv(d: dict) -> tuple[AcousticConfig, float]:
    if d.get("kind") != "acoustic":
        raise ValueError(f"not an acoustic config (kind={d.get('kind')!r})")
    cfg = AcousticConfig(
        layers=int(d["layers"]),
        heads=int(d["heads"]),
        model_dim=int(d["model_dim"]),
        ffn_dim=int(d["ffn_dim"]),
        text_vocab=int(d["text_vocab"]),
        fsq=FsqConfig(groups=int(d["fsq.groups"]), levels=_tuple(d["fsq.levels"], int)),
        chunk_tokens=int(d["chunk_tokens"]),
        stop_threshold=float(d["stop_threshold"]),
        stop_loss_weight=float(d["stop_loss_weight"]),
    )
    return cfg, float(d["token_rate"])


# -- corpus ---------------------------------------------------------------------


def corpus_to_kv(spec: CorpusSpec) -> dict:
    d = {
        "kind": "corpus",
        "vocab_size": spec.vocab_size,
        "symbol_duration_s": _fmt_tuple(spec.symbol_duration_s),
        "sample_rate": spec.sample_rate,
        "token_rate": spec.token_rate,
        "chunk_tokens": spec.chunk_tokens,
        "noise_floor": spec.noise_floor,
        "amplitude": spec.amplitude,
        "crossfade_s": spec.crossfade_s,
        "text_len_range": _fmt_tuple(spec.text_len_range),
        "prompt_symbols": spec.prompt_symbols,
        "prompt_tokens": spec.prompt_tokens,
        "n_speakers": len(spec.speakers),
    }
    for i, sp in enumerate(spec.speakers):
        d[f"speaker.{i}.base_pitch"] = sp.base_pitch
        d[f"speaker.{i}.harmonics"] = _fmt_tuple(sp.harmonics)
    return d


def corpus_from_kv(d: dict) -> CorpusSpec:
    if d.get("kind") != "corpus":
        raise ValueError(f"not a corpus spec (kind={d.get('kind')!r})")
    speakers = tuple(
        SpeakerParams(base_pitch=float(d[f"speaker.{i}.base_pitch"]),
                      harmonics=_tuple(d[f"speaker.{i}.harmonics"]))
        for i in range(int(d["n_speakers"]))
    )
    return CorpusSpec(
        vocab_size=int(d["vocab_size"]),
        symbol_duration_s=_tuple(d["symbol_duration_s"]),
        sample_rate=int(d["sample_rate"]),
        token_rate=float(d["token_rate"]),
        chunk_tokens=int(d["chunk_tokens"]),
        noise_floor=float(d["noise_floor"]),
        amplitude=float(d["amplitude"]),
        crossfade_s=float(d["crossfade_s"]),
        text_len_range=_tuple(d["text_len_range"], int),
        prompt_symbols=int(d["prompt_symbols"]),
        prompt_tokens=int(d["prompt_tokens"]),
        speakers=speakers,
    )


CORPUS_PROFILES = {
    "fast8k": lambda: CorpusSpec(),
    "desk48k": lambda: CorpusSpec(sample_rate=48_000),
}


# -- experiment -------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """Paths and seeds tying one full run together; all paths must exist."""

    codec_config: Path
    acoustic_config: Path
    corpus_spec: Path
    sampler_nfe: int
    sampler_mode: str
    seed: int
    out_dir: Path

    def __post_init__(self):
        for name in ("codec_config", "acoustic_config", "corpus_spec"):
            p = Path(getattr(self, name))
            object.__setattr__(self, name, p)
            if not p.exists():
                raise FileNotFoundError(f"{name} path does not exist: {p}")
        object.__setattr__(self, "out_dir", Path(self.out_dir))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        d = load_kv(path)
        base = Path(path).parent
        return cls(
            codec_config=base / d["codec_config"],
            acoustic_config=base / d["acoustic_config"],
            corpus_spec=base / d["corpus_spec"],
            sampler_nfe=int(d["sampler_nfe"]),
            sampler_mode=d["sampler_mode"],
            seed=int(d["seed"]),
            out_dir=base / d["out_dir"],
        )

    def save(self, path):
        save_kv(path, {
            "kind": "experiment",
            "codec_config": self.codec_config.name,
            "acoustic_config": self.acoustic_config.name,
            "corpus_spec": self.corpus_spec.name,
            "sampler_nfe": self.sampler_nfe,
            "sampler_mode": self.sampler_mode,
            "seed": self.seed,
            "out_dir": self.out_dir.name,
        })
