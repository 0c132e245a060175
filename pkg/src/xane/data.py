"""Manifest entries -> per-segment training arrays.

Each labeled 1 s segment becomes one training row: a (frames x dim) feature
slice, 11 regression targets with presence masks, three class indices, and
the VAD gate flag. Targets stay in native units here; z-scoring happens in
the training loop with statistics computed from the training split only.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from xane.audio import read_wav
from xane.errors import XaneError
from xane.features import FeatureMatrix, frames_per_segment, melfb, mvn, read_features
from xane.manifest import ManifestEntry
from xane.model import CODEC_CLASSES, NOISE_CLASSES, REGRESSION_TASKS

VAD_GATE_THRESHOLD = 0.2  # segments with less speech train the VAD head only
STD_FLOOR = 1e-8

_VAD_IDX = REGRESSION_TASKS.index("vad")


def melfb_loader(entry: ManifestEntry) -> FeatureMatrix:
    """Default feature path: normalized log-mel from the degraded audio."""
    return mvn(melfb(read_wav(entry.degraded)))


def make_xfea_loader(index: dict[str, str]):
    """Loader over precomputed feature files keyed by utterance id."""

    def load(entry: ManifestEntry) -> FeatureMatrix:
        try:
            path = index[entry.id]
        except KeyError:
            raise XaneError(f"no feature file indexed for utterance {entry.id!r}")
        f = read_features(path)
        return f if f.normalized else mvn(f)

    return load


@dataclass
class SegmentDataset:
    features: np.ndarray      # (N, T, D)
    targets: np.ndarray       # (N, 11) native units
    masks: np.ndarray         # (N, 11) 0/1 presence
    noise_targets: np.ndarray   # (N,) int
    codec_targets: np.ndarray   # (N,) int
    overlap_targets: np.ndarray  # (N,) int
    gate: np.ndarray          # (N,) bool, True = enough speech for full loss
    utterance_ids: list[str]  # per segment

    def __len__(self) -> int:
        return self.features.shape[0]


def _segment_targets(entry: ManifestEntry) -> tuple[np.ndarray, np.ndarray]:
    """Per-segment (n_seg, 11) targets and masks in REGRESSION_TASKS order."""
    lab = entry.labels
    utt_vals = {
        "c50_db": lab.c50_db, "t60_ms": lab.t60_ms, "drr_db": lab.drr_db,
        "c5_db": lab.c5_db, "rvol_m3": lab.rvol_m3, "refc": lab.refc,
        "pesq": lab.pesq, "estoi": lab.estoi, "bitrate_kbps": lab.bitrate_kbps,
    }
    n = len(lab.segments)
    t = np.zeros((n, len(REGRESSION_TASKS)))
    m = np.zeros_like(t)
    for j, task in enumerate(REGRESSION_TASKS):
        if task in utt_vals:
            if utt_vals[task] is not None:
                t[:, j] = utt_vals[task]
                m[:, j] = 1.0
    for i, seg in enumerate(lab.segments):
        t[i, _VAD_IDX] = seg.vad_fraction
        m[i, _VAD_IDX] = 1.0
        j = REGRESSION_TASKS.index("snr_db")
        if seg.snr_db is not None:
            t[i, j] = seg.snr_db
            m[i, j] = 1.0
    return t, m


def load_dataset(entries: list[ManifestEntry], loader=melfb_loader) -> SegmentDataset:
    if not entries:
        raise XaneError("empty manifest: no utterances to load")
    feats, targs, masks = [], [], []
    noise_t, codec_t, over_t, gates, ids = [], [], [], [], []
    for entry in entries:
        f = loader(entry)
        fps = frames_per_segment(f.hop_ms)
        t, m = _segment_targets(entry)
        for i, seg in enumerate(entry.labels.segments):
            lo = i * fps
            if lo + fps > len(f):
                # imported features may run a frame short on the tail segment
                continue
            feats.append(f.frames[lo:lo + fps])
            targs.append(t[i])
            masks.append(m[i])
            noise_t.append(NOISE_CLASSES.index(entry.labels.noise_type))
            codec_t.append(CODEC_CLASSES.index(entry.labels.codec_type))
            over_t.append(int(entry.labels.overlap))
            gates.append(seg.vad_fraction >= VAD_GATE_THRESHOLD)
            ids.append(entry.id)
    if not feats:
        raise XaneError("manifest produced no full segments")
    return SegmentDataset(
        features=np.stack(feats),
        targets=np.stack(targs),
        masks=np.stack(masks),
        noise_targets=np.array(noise_t, dtype=np.int64),
        codec_targets=np.array(codec_t, dtype=np.int64),
        overlap_targets=np.array(over_t, dtype=np.int64),
        gate=np.array(gates, dtype=bool),
        utterance_ids=ids,
    )


def compute_task_stats(ds: SegmentDataset) -> np.ndarray:
    """Per-task (mean, sd) over mask-present training targets, shape (11, 2).

    Tasks with no present labels get (0, 1); near-constant tasks get sd 1 so
    normalization never divides by ~0.
    """
    stats = np.zeros((len(REGRESSION_TASKS), 2))
    stats[:, 1] = 1.0
    for j in range(len(REGRESSION_TASKS)):
        present = ds.masks[:, j] > 0
        if not present.any():
            continue
        vals = ds.targets[present, j]
        stats[j, 0] = vals.mean()
        sd = vals.std()
        stats[j, 1] = sd if sd > STD_FLOOR else 1.0
    return stats


def normalize_targets(targets: np.ndarray, stats: np.ndarray) -> np.ndarray:
    return (targets - stats[:, 0]) / stats[:, 1]


def denormalize_targets(normalized: np.ndarray, stats: np.ndarray) -> np.ndarray:
    return normalized * stats[:, 1] + stats[:, 0]
