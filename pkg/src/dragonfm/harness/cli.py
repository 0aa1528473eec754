"""Command-line entry point tying corpus, codec, acoustic model, and eval together.

Every subcommand that produces files also writes a deterministic manifest
(config snapshot, seed, package version, metrics, output checksums) into its
output directory; wall-clock measurements go to a separate timings.json so
reruns with identical configs and seeds compare byte-identical.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .. import __version__
from ..acoustic import AcousticConfig, AcousticModel, generate
from ..codec import CODEC_PROFILES, Codec, bitrate_report, decode_all, encode
from ..evalkit import (
    PAPER_FAMILIES,
    embed_clips,
    fad,
    measure_latency_rtf,
    plot_tnfe,
    schedule_table,
    snr,
    symbol_error_rate,
    tnfe,
)
from ..flow import SamplerConfig
from ..fsq import TokenStream, read_tokens, write_tokens
from ..signal import MelConfig, StftConfig, read_wave, write_wave
from . import config as cfgmod
from .corpus import build_corpus
from .manifest import write_run_manifest, write_timings
from .train import (
    load_corpus_waves,
    tokenize_corpus,
    train_acoustic,
    train_codec,
    utterances_from_records,
)

TABLE_COLUMNS = ("duration_s", "model", "cache", "tnfe", "ar_steps", "nfe",
                 "chunk_tokens", "sample_rate")


def _parse_ids(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.replace(",", " ").split()]
    except ValueError:
        raise ValueError(f"text must be space-separated symbol ids, got {text!r}")


def _corpus_spec(args) -> "cfgmod.CorpusSpec":
    if getattr(args, "spec", None):
        return cfgmod.corpus_from_kv(cfgmod.load_kv(args.spec))
    return cfgmod.CORPUS_PROFILES[args.profile]()


def _codec_cfg(args):
    if getattr(args, "config", None):
        return cfgmod.codec_from_kv(cfgmod.load_kv(args.config))
    return CODEC_PROFILES[args.profile]()


def _fad_mel(sample_rate: int) -> MelConfig:
    hop = sample_rate // 100
    return MelConfig(sample_rate, 64, 100.0, 3600.0, StftConfig(8 * hop, hop))


# -- corpus ---------------------------------------------------------------------


def cmd_corpus_build(args) -> int:
    spec = _corpus_spec(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = build_corpus(spec, args.n, args.seed, out)
    spec_path = out / "corpus.kv"
    cfgmod.save_kv(spec_path, cfgmod.corpus_to_kv(spec))
    write_run_manifest(out, "corpus build", cfgmod.corpus_to_kv(spec), args.seed,
                       metrics={"n_utterances": len(records)},
                       outputs=[spec_path, out / "manifest.jsonl"])
    print(f"built {len(records)} utterances in {out}")
    return 0


# -- codec ----------------------------------------------------------------------


def cmd_codec_train(args) -> int:
    spec = cfgmod.corpus_from_kv(cfgmod.load_kv(Path(args.corpus) / "corpus.kv"))
    cfg = _codec_cfg(args)
    if cfg.sample_rate != spec.sample_rate:
        raise ValueError(
            f"codec sample rate {cfg.sample_rate} != corpus rate {spec.sample_rate}")
    records = load_corpus_waves(args.corpus, spec)
    codec = Codec(args.seed, cfg)
    ema, reports = train_codec(codec, records, steps=args.steps, batch=args.batch,
                               crop_tokens=args.crop_tokens, seed=args.seed,
                               lr=args.lr)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    codec.save(out / "codec.dfm1")
    saved = ema.swap_in(codec.params())
    codec.save(out / "codec_ema.dfm1")
    ema.swap_out(codec.params(), saved)
    cfg_path = out / "codec.kv"
    cfgmod.save_kv(cfg_path, cfgmod.codec_to_kv(cfg))
    write_run_manifest(
        out, "codec train", cfgmod.codec_to_kv(cfg), args.seed,
        metrics={"steps": args.steps, "final_loss": reports[-1]["total"],
                 "bitrate": bitrate_report(cfg)["bits_per_second"]},
        outputs=[out / "codec.dfm1", out / "codec_ema.dfm1", cfg_path])
    print(f"trained codec for {args.steps} steps; final loss {reports[-1]['total']:.4f}")
    return 0


def _load_codec(config_path, ckpt_path) -> Codec:
    cfg = cfgmod.codec_from_kv(cfgmod.load_kv(config_path))
    codec = Codec(0, cfg)
    codec.load(ckpt_path)
    return codec


def cmd_codec_encode(args) -> int:
    codec = _load_codec(args.config, args.ckpt)
    wave, _ = read_wave(args.infile, codec.cfg.sample_rate)
    stream = encode(codec, wave)
    write_tokens(args.out, stream)
    if stream.padded_samples:
        print(f"note: input padded with {stream.padded_samples} samples of silence")
    print(f"{stream.num_frames} frames -> {args.out}")
    return 0


def cmd_codec_decode(args) -> int:
    codec = _load_codec(args.config, args.ckpt)
    stream = read_tokens(args.infile)
    if stream.cfg != codec.cfg.fsq:
        raise ValueError(
            f"token stream quantizer {stream.cfg} != codec quantizer {codec.cfg.fsq}")
    wave = decode_all(codec, stream)
    write_wave(args.out, wave, codec.cfg.sample_rate)
    print(f"{stream.num_frames} frames -> {wave.size} samples -> {args.out}")
    return 0


# -- acoustic ---------------------------------------------------------------------


def _acoustic_cfg(args, spec) -> AcousticConfig:
    if getattr(args, "config", None):
        cfg, _rate = cfgmod.acoustic_from_kv(cfgmod.load_kv(args.config))
        return cfg
    size = {"fast": dict(layers=4, model_dim=128, ffn_dim=384),
            "desk": dict(layers=6, model_dim=256, ffn_dim=768)}[args.size]
    codec_cfg = cfgmod.codec_from_kv(cfgmod.load_kv(args.codec_config))
    return AcousticConfig(text_vocab=spec.vocab_size, fsq=codec_cfg.fsq,
                          chunk_tokens=spec.chunk_tokens, **size)


def cmd_acoustic_train(args) -> int:
    spec = cfgmod.corpus_from_kv(cfgmod.load_kv(Path(args.corpus) / "corpus.kv"))
    codec = _load_codec(args.codec_config, args.codec_ckpt)
    cfg = _acoustic_cfg(args, spec)
    records = load_corpus_waves(args.corpus, spec)
    toks = tokenize_corpus(codec, records)
    utts = utterances_from_records(toks, cfg)
    model = AcousticModel(args.seed, cfg)
    ema, reports = train_acoustic(model, utts, steps=args.steps, batch=args.batch,
                                  seed=args.seed, mode=args.mode, lr=args.lr)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "acoustic.dfm1")
    saved = ema.swap_in(model.params())
    model.save(out / "acoustic_ema.dfm1")
    ema.swap_out(model.params(), saved)
    cfg_path = out / "acoustic.kv"
    cfgmod.save_kv(cfg_path, cfgmod.acoustic_to_kv(cfg, spec.token_rate))
    write_run_manifest(
        out, "acoustic train", cfgmod.acoustic_to_kv(cfg, spec.token_rate), args.seed,
        metrics={"steps": args.steps, "mode": args.mode,
                 "final_flow": reports[-1]["flow"], "final_stop": reports[-1]["stop"]},
        outputs=[out / "acoustic.dfm1", out / "acoustic_ema.dfm1", cfg_path])
    print(f"trained acoustic model ({args.mode}) for {args.steps} steps; "
          f"final flow loss {reports[-1]['flow']:.4f}")
    return 0


def cmd_infer(args) -> int:
    cfg, token_rate = cfgmod.acoustic_from_kv(cfgmod.load_kv(args.config))
    model = AcousticModel(0, cfg)
    model.load(args.ckpt)
    text = _parse_ids(args.text)
    if args.prompt:
        prompt = read_tokens(args.prompt).ids
    else:
        prompt = np.zeros((0, cfg.fsq.groups), dtype=np.int64)
    sampler = SamplerConfig(nfe=args.nfe, mode=args.fm_mode)
    result = generate(model, text, prompt, max_chunks=args.max_chunks,
                      sampler=sampler, seed=args.seed)
    from fractions import Fraction
    fr = Fraction(token_rate).limit_denominator(10_000)
    stream = TokenStream(ids=result.token_ids, rate=(fr.numerator, fr.denominator),
                         cfg=cfg.fsq)
    write_tokens(args.out, stream)
    out_dir = Path(args.out).parent
    write_run_manifest(
        out_dir, "acoustic infer",
        {"text": text, "nfe": args.nfe, "fm_mode": args.fm_mode,
         "max_chunks": args.max_chunks}, args.seed,
        metrics={"chunks": result.chunks_emitted,
                 "denoiser_calls": result.denoiser_calls,
                 "stop_trace": [round(p, 6) for p in result.stop_trace]},
        outputs=[Path(args.out)])
    print(f"generated {result.chunks_emitted} chunks "
          f"({result.denoiser_calls} denoiser calls) -> {args.out}")
    return 0


# -- eval -------------------------------------------------------------------------


def cmd_eval_tnfe_table(args) -> int:
    durations = [float(d) for d in args.durations.split(",")]
    lines = [",".join(TABLE_COLUMNS)]
    for d in durations:
        for row in schedule_table(d):
            lines.append(",".join(str(row[c]) for c in TABLE_COLUMNS))
    text = "\n".join(lines) + "\n"
    if args.csv:
        Path(args.csv).write_text(text)
    sys.stdout.write(text)
    return 0


def _wave_dir(path) -> tuple[list[np.ndarray], int]:
    p = Path(path)
    files = sorted(p.glob("*.wav")) if p.is_dir() else [p]
    if not files:
        raise FileNotFoundError(f"no wave files under {path}")
    waves, rate = [], None
    for f in files:
        w, r = read_wave(f)
        if rate is not None and r != rate:
            raise ValueError(f"mixed sample rates under {path}: {rate} vs {r}")
        rate = r
        waves.append(w)
    return waves, rate


def cmd_eval_fad(args) -> int:
    wa, ra = _wave_dir(args.a)
    wb, rb = _wave_dir(args.b)
    if ra != rb:
        raise ValueError(f"sample rates differ: {ra} vs {rb}")
    mel = _fad_mel(ra)
    value = fad(embed_clips(wa, mel, source=str(args.a)),
                embed_clips(wb, mel, source=str(args.b)))
    print(f"fad = {value:.6f}")
    if args.out_dir:
        write_run_manifest(args.out_dir, "eval fad",
                           {"a": str(args.a), "b": str(args.b)}, None,
                           metrics={"fad": value})
    return 0


def cmd_eval_snr(args) -> int:
    ref, r1 = read_wave(args.ref)
    test, r2 = read_wave(args.test)
    if r1 != r2:
        raise ValueError(f"sample rates differ: {r1} vs {r2}")
    print(f"snr_db = {snr(ref, test):.4f}")
    return 0


def cmd_eval_ser(args) -> int:
    spec = cfgmod.corpus_from_kv(cfgmod.load_kv(args.spec))
    wave, _ = read_wave(args.wave, spec.sample_rate)
    value = symbol_error_rate(wave, _parse_ids(args.text), spec)
    print(f"ser = {value:.6f}")
    if args.out_dir:
        write_run_manifest(args.out_dir, "eval ser",
                           {"wave": str(args.wave), "text": args.text}, None,
                           metrics={"ser": value})
    return 0


def cmd_eval_latency(args) -> int:
    from ..acoustic import ChunkSynthRunner, FullFmSynthRunner

    spec = cfgmod.corpus_from_kv(cfgmod.load_kv(args.spec))
    codec = _load_codec(args.codec_config, args.codec_ckpt)
    cfg, _rate = cfgmod.acoustic_from_kv(cfgmod.load_kv(args.acoustic_config))
    model = AcousticModel(0, cfg)
    model.load(args.acoustic_ckpt)
    text = _parse_ids(args.text)
    prompt = read_tokens(args.prompt).ids if args.prompt else \
        np.zeros((0, cfg.fsq.groups), dtype=np.int64)
    chunks = args.chunks

    chunk_sched = [f for f in PAPER_FAMILIES
                   if f.kind == "chunk_ar" and f.nfe == args.nfe]
    chunk_tnfe = chunks * args.nfe

    rep_chunk = measure_latency_rtf(
        lambda: ChunkSynthRunner(model, codec, text, prompt,
                                 SamplerConfig(nfe=args.nfe, mode=args.fm_mode),
                                 args.seed, chunks),
        repeats=args.repeats)
    rep_full = measure_latency_rtf(
        lambda: FullFmSynthRunner(model, codec, text, prompt,
                                  SamplerConfig(nfe=args.full_nfe, mode="euler_cfm"),
                                  args.seed, chunks),
        repeats=args.repeats)
    print(f"chunk-AR : first {rep_chunk.first_chunk_s:.4f}s rtf {rep_chunk.rtf:.3f} "
          f"tnfe {rep_chunk.tnfe_observed}")
    print(f"full-FM  : first {rep_full.first_chunk_s:.4f}s rtf {rep_full.rtf:.3f} "
          f"tnfe {rep_full.tnfe_observed}")
    if args.out_dir:
        write_run_manifest(args.out_dir, "eval latency",
                           {"text": text, "nfe": args.nfe, "chunks": chunks},
                           args.seed,
                           metrics={"tnfe_chunk": rep_chunk.tnfe_observed,
                                    "tnfe_full": rep_full.tnfe_observed,
                                    "tnfe_predicted": chunk_tnfe})
        write_timings(args.out_dir, {
            "chunk_ar": {"first_chunk_s": rep_chunk.first_chunk_s,
                         "rtf": rep_chunk.rtf, "total_s": rep_chunk.total_s},
            "full_fm": {"first_chunk_s": rep_full.first_chunk_s,
                        "rtf": rep_full.rtf, "total_s": rep_full.total_s},
        })
    return 0


def cmd_plot_tnfe(args) -> int:
    durations = [float(d) for d in args.durations.split(",")]
    plot_tnfe(durations, args.out)
    print(f"wrote {args.out}")
    return 0


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dragonfm",
                                description="chunk-autoregressive speech toolkit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    corpus = sub.add_parser("corpus", help="synthetic corpus tools")
    csub = corpus.add_subparsers(dest="subcommand", required=True)
    cb = csub.add_parser("build", help="generate a corpus")
    cb.add_argument("--out", required=True)
    cb.add_argument("--n", type=int, default=200)
    cb.add_argument("--seed", type=int, default=0)
    cb.add_argument("--profile", default="fast8k", choices=sorted(cfgmod.CORPUS_PROFILES))
    cb.add_argument("--spec", help="corpus spec kv file (overrides --profile)")
    cb.set_defaults(func=cmd_corpus_build)

    codec = sub.add_parser("codec", help="codec train/encode/decode")
    ksub = codec.add_subparsers(dest="subcommand", required=True)
    kt = ksub.add_parser("train")
    kt.add_argument("--corpus", required=True)
    kt.add_argument("--out", required=True)
    kt.add_argument("--steps", type=int, default=300)
    kt.add_argument("--batch", type=int, default=4)
    kt.add_argument("--crop-tokens", type=int, default=10)
    kt.add_argument("--seed", type=int, default=0)
    kt.add_argument("--lr", type=float, default=1e-3)
    kt.add_argument("--profile", default="fast8k", choices=sorted(CODEC_PROFILES))
    kt.add_argument("--config", help="codec kv file (overrides --profile)")
    kt.set_defaults(func=cmd_codec_train)
    ke = ksub.add_parser("encode")
    ke.add_argument("--config", required=True)
    ke.add_argument("--ckpt", required=True)
    ke.add_argument("--in", dest="infile", required=True)
    ke.add_argument("--out", required=True)
    ke.set_defaults(func=cmd_codec_encode)
    kd = ksub.add_parser("decode")
    kd.add_argument("--config", required=True)
    kd.add_argument("--ckpt", required=True)
    kd.add_argument("--in", dest="infile", required=True)
    kd.add_argument("--out", required=True)
    kd.set_defaults(func=cmd_codec_decode)

    ac = sub.add_parser("acoustic", help="acoustic model train/infer")
    asub = ac.add_subparsers(dest="subcommand", required=True)
    at = asub.add_parser("train")
    at.add_argument("--corpus", required=True)
    at.add_argument("--codec-config", required=True)
    at.add_argument("--codec-ckpt", required=True)
    at.add_argument("--out", required=True)
    at.add_argument("--steps", type=int, default=2000)
    at.add_argument("--batch", type=int, default=4)
    at.add_argument("--seed", type=int, default=0)
    at.add_argument("--lr", type=float, default=1e-3)
    at.add_argument("--mode", default="cfm", choices=["cfm", "meanflow"])
    at.add_argument("--size", default="fast", choices=["fast", "desk"])
    at.add_argument("--config", help="acoustic kv file (overrides --size)")
    at.set_defaults(func=cmd_acoustic_train)

    def add_infer(parser):
        parser.add_argument("--config", required=True, help="acoustic kv file")
        parser.add_argument("--ckpt", required=True)
        parser.add_argument("--text", required=True, help="space-separated symbol ids")
        parser.add_argument("--prompt", help="speaker prompt token file (.dfmt)")
        parser.add_argument("--nfe", type=int, default=2)
        parser.add_argument("--fm-mode", default="meanflow",
                            choices=["euler_cfm", "meanflow"])
        parser.add_argument("--seed", type=int, default=0)
        parser.add_argument("--max-chunks", type=int, default=8)
        parser.add_argument("--out", required=True)
        parser.set_defaults(func=cmd_infer)

    add_infer(asub.add_parser("infer"))
    add_infer(sub.add_parser("infer", help="alias for `acoustic infer`"))

    ev = sub.add_parser("eval", help="metrics and cost analysis")
    esub = ev.add_subparsers(dest="subcommand", required=True)
    et = esub.add_parser("tnfe-table")
    et.add_argument("--durations", default="2,32")
    et.add_argument("--csv")
    et.set_defaults(func=cmd_eval_tnfe_table)
    ef = esub.add_parser("fad")
    ef.add_argument("--a", required=True)
    ef.add_argument("--b", required=True)
    ef.add_argument("--out-dir")
    ef.set_defaults(func=cmd_eval_fad)
    es = esub.add_parser("snr")
    es.add_argument("--ref", required=True)
    es.add_argument("--test", required=True)
    es.set_defaults(func=cmd_eval_snr)
    er = esub.add_parser("ser")
    er.add_argument("--wave", required=True)
    er.add_argument("--text", required=True)
    er.add_argument("--spec", required=True, help="corpus spec kv file")
    er.add_argument("--out-dir")
    er.set_defaults(func=cmd_eval_ser)
    el = esub.add_parser("latency")
    el.add_argument("--spec", required=True)
    el.add_argument("--codec-config", required=True)
    el.add_argument("--codec-ckpt", required=True)
    el.add_argument("--acoustic-config", required=True)
    el.add_argument("--acoustic-ckpt", required=True)
    el.add_argument("--text", required=True)
    el.add_argument("--prompt")
    el.add_argument("--chunks", type=int, default=4)
    el.add_argument("--nfe", type=int, default=2)
    el.add_argument("--full-nfe", type=int, default=32)
    el.add_argument("--fm-mode", default="euler_cfm", choices=["euler_cfm", "meanflow"])
    el.add_argument("--seed", type=int, default=0)
    el.add_argument("--repeats", type=int, default=3)
    el.add_argument("--out-dir")
    el.set_defaults(func=cmd_eval_latency)

    pl = sub.add_parser("plot", help="figures")
    psub = pl.add_subparsers(dest="subcommand", required=True)
    pt = psub.add_parser("tnfe")
    pt.add_argument("--durations", default="2,4,8,16,32")
    pt.add_argument("--out", required=True)
    pt.set_defaults(func=cmd_plot_tnfe)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
