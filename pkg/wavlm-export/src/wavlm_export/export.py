"""Run an embedding model over a manifest's audio and write XFEA files."""
from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile

from .runner import DIM, SAMPLE_RATE, make_runner
from .xfea import write_xfea

log = logging.getLogger("wavlm_export")


@dataclass
class ExportJob:
    manifest: str
    out_dir: str
    model: str = "stub"
    device: str = "cpu"
    layer: int = -1


@dataclass
class ExportResult:
    index_path: str
    exported: int = 0
    skipped: int = 0
    rows: list = field(default_factory=list)


def _read_manifest(path: str) -> list[tuple[str, str]]:
    """(id, degraded wav path) pairs; relative paths resolve against the
    manifest's directory."""
    base = os.path.dirname(os.path.abspath(path))
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                entry = json.loads(line)
                utt_id, wav = entry["id"], entry["degraded"]
            except (json.JSONDecodeError, KeyError) as exc:
                raise ValueError(f"{path} line {lineno}: {exc}")
            if not os.path.isabs(wav):
                wav = os.path.join(base, wav)
            out.append((utt_id, wav))
    return out


def _load_wav(path: str) -> np.ndarray:
    rate, data = wavfile.read(path)
    if rate != SAMPLE_RATE:
        raise ValueError(f"expected {SAMPLE_RATE} Hz, got {rate}: {path}")
    if data.ndim != 1:
        raise ValueError(f"expected mono audio: {path}")
    if data.dtype.kind == "i":
        data = data / float(-np.iinfo(data.dtype).min)
    return np.asarray(data, dtype=np.float64)


def export_features(job: ExportJob) -> ExportResult:
    entries = _read_manifest(job.manifest)
    runner = make_runner(job.model, job.device, job.layer)
    os.makedirs(job.out_dir, exist_ok=True)

    result = ExportResult(index_path=os.path.join(job.out_dir, "index.csv"))
    for utt_id, wav in entries:
        try:
            feats = runner(_load_wav(wav))
        except (OSError, ValueError) as exc:
            log.warning("skipping %s: %s", utt_id, exc)
            result.skipped += 1
            continue
        if feats.shape[1] != DIM:
            raise RuntimeError(
                f"model produced dim {feats.shape[1]}, expected {DIM}")
        # index paths stay relative to the index file so the export
        # directory can be moved as a unit
        rel = f"{utt_id}.xfea"
        write_xfea(os.path.join(job.out_dir, rel), feats,
                   hop_ms=20.0, normalized=False)
        result.rows.append((utt_id, rel))
        result.exported += 1

    with open(result.index_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "path"])
        w.writerows(result.rows)
    return result
