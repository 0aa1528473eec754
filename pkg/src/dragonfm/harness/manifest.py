"""Run manifests and checksummed file indexes.

Manifests capture everything a rerun needs to reproduce byte-identical
outputs: config snapshot, seeds, package version, metric values, and output
file checksums. Wall-clock measurements are deliberately excluded (they go to
a separate timings file) so reruns compare equal.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def file_entry(path, base_dir) -> dict:
    path = Path(path)
    return {
        "path": str(path.relative_to(base_dir)),
        "bytes": path.stat().st_size,
        "sha256": sha256_file(path),
    }


def write_jsonl(path, records: list[dict]):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_run_manifest(out_dir, command: str, config: dict, seed,
                       metrics: dict | None = None,
                       outputs: list | None = None) -> Path:
    """Deterministic manifest.json in the run directory."""
    from .. import __version__

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "command": command,
        "config": config,
        "seed": seed,
        "version": __version__,
        "metrics": metrics or {},
        "outputs": [file_entry(p, out_dir) for p in (outputs or [])],
    }
    path = out_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


def write_timings(out_dir, timings: dict) -> Path:
    """Wall-clock measurements, kept out of the deterministic manifest."""
    path = Path(out_dir) / "timings.json"
    with open(path, "w") as fh:
        json.dump(timings, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path
