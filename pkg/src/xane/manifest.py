"""Dataset manifest serialization (JSON lines, UTF-8).

Field names are a fixed external contract: id, degraded, clean, rir,
group_codec, group_overlap, labels{c50_db, c5_db, t60_ms, drr_db, rvol_m3,
refc, estoi, pesq?, bitrate_kbps?, noise_type, codec_type, overlap,
segments: [{start_ms, vad, snr_db?}]}. Optional fields are omitted keys,
never null placeholders. Paths are stored relative to the manifest file.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from xane.errors import ConfigError
from xane.metrics import AcousticLabels, SegmentLabels


@dataclass
class ManifestEntry:
    id: str
    degraded: str
    clean: str
    rir: str
    group_codec: str
    group_overlap: bool
    labels: AcousticLabels


def labels_to_dict(labels: AcousticLabels) -> dict:
    out = {
        "c50_db": labels.c50_db,
        "c5_db": labels.c5_db,
        "t60_ms": labels.t60_ms,
        "drr_db": labels.drr_db,
        "rvol_m3": labels.rvol_m3,
        "refc": labels.refc,
        "estoi": labels.estoi,
    }
    if labels.pesq is not None:
        out["pesq"] = labels.pesq
    if labels.bitrate_kbps is not None:
        out["bitrate_kbps"] = labels.bitrate_kbps
    out["noise_type"] = labels.noise_type
    out["codec_type"] = labels.codec_type
    out["overlap"] = labels.overlap
    segs = []
    for s in labels.segments:
        seg = {"start_ms": s.start_ms, "vad": s.vad_fraction}
        if s.snr_db is not None:
            seg["snr_db"] = s.snr_db
        segs.append(seg)
    out["segments"] = segs
    return out


def labels_from_dict(raw: dict) -> AcousticLabels:
    segments = [SegmentLabels(start_ms=s["start_ms"], vad_fraction=s["vad"],
                              snr_db=s.get("snr_db"))
                for s in raw["segments"]]
    # The utterance-level SNR is not serialized; recover a summary value
    # from the per-segment labels (mean over segments that carry one).
    seg_snrs = [s.snr_db for s in segments if s.snr_db is not None]
    snr_db = float(np.mean(seg_snrs)) if seg_snrs else 0.0
    return AcousticLabels(
        c50_db=raw["c50_db"], c5_db=raw["c5_db"], t60_ms=raw["t60_ms"],
        drr_db=raw["drr_db"], rvol_m3=raw["rvol_m3"], refc=raw["refc"],
        snr_db=snr_db, estoi=raw["estoi"], pesq=raw.get("pesq"),
        bitrate_kbps=raw.get("bitrate_kbps"), noise_type=raw["noise_type"],
        codec_type=raw["codec_type"], overlap=raw["overlap"],
        segments=segments)


def entry_to_json(entry: ManifestEntry) -> str:
    return json.dumps({
        "id": entry.id,
        "degraded": entry.degraded,
        "clean": entry.clean,
        "rir": entry.rir,
        "group_codec": entry.group_codec,
        "group_overlap": entry.group_overlap,
        "labels": labels_to_dict(entry.labels),
    })


def write_manifest(entries: list[ManifestEntry], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(entry_to_json(entry) + "\n")


def read_manifest(path: str | os.PathLike) -> list[ManifestEntry]:
    """Parses a manifest; paths are resolved against the manifest directory."""
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                entry = ManifestEntry(
                    id=raw["id"],
                    degraded=os.path.join(base, raw["degraded"]),
                    clean=os.path.join(base, raw["clean"]),
                    rir=os.path.join(base, raw["rir"]),
                    group_codec=raw["group_codec"],
                    group_overlap=raw["group_overlap"],
                    labels=labels_from_dict(raw["labels"]),
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise ConfigError(f"{path}: corrupt manifest line {lineno}: {exc}") from exc
            entries.append(entry)
    return entries
