"""Scoring: embedding clustering, per-task error reports, real-time factor.

k-means is hand-rolled (k-means++ seeding, Lloyd iterations, best of
`restarts`) because determinism down to the seed matters more here than
speed. Cluster scoring maps each cluster to its majority class and reports
macro-averaged F1 as a percentage.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from xane.audio import Waveform
from xane.errors import XaneError
from xane.infer import infer_utterance
from xane.model import REGRESSION_TASKS

KMEANS_MAX_ITER = 300


@dataclass
class ClusterResult:
    assignments: np.ndarray  # (N,) cluster id per row
    centroids: np.ndarray    # (k, d)
    inertia: float


def _plus_plus_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    d2 = np.square(x - centroids[0]).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:  # all remaining points coincide with a centroid
            centroids[j] = x[rng.integers(n)]
            continue
        centroids[j] = x[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.square(x - centroids[j]).sum(axis=1))
    return centroids


def _lloyd(x: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    prev_inertia = np.inf
    assignments = None
    for _ in range(KMEANS_MAX_ITER):
        d2 = np.square(x[:, None, :] - centroids[None, :, :]).sum(axis=2)
        new_assign = d2.argmin(axis=1)
        inertia = float(d2[np.arange(len(x)), new_assign].sum())
        assert inertia <= prev_inertia * (1.0 + 1e-12) + 1e-12, \
            "k-means inertia increased"
        if assignments is not None and np.array_equal(new_assign, assignments):
            return assignments, centroids, inertia
        assignments = new_assign
        prev_inertia = inertia
        for j in range(centroids.shape[0]):
            members = x[assignments == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
            else:
                # re-seed an empty cluster at the point farthest from its centroid
                far = int(np.square(x - centroids[assignments]
                                    ).sum(axis=1).argmax())
                centroids[j] = x[far]
    return assignments, centroids, inertia


def kmeans(embeddings: np.ndarray, k: int, seed: int,
           restarts: int = 10) -> ClusterResult:
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < k:
        raise XaneError(f"need at least k={k} points, got shape {x.shape}")
    if k < 1:
        raise XaneError("k must be >= 1")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        assign, cent, inertia = _lloyd(x, _plus_plus_init(x, k, rng))
        if best is None or inertia < best.inertia:
            best = ClusterResult(assign, cent, inertia)
    return best


def macro_f1(pred, truth) -> float:
    """Macro-averaged F1 in percent over the classes present in `truth`."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if len(pred) != len(truth) or len(truth) == 0:
        raise XaneError("prediction/truth size mismatch or empty input")
    scores = []
    for c in np.unique(truth):
        tp = np.sum((pred == c) & (truth == c))
        fp = np.sum((pred == c) & (truth != c))
        fn = np.sum((pred != c) & (truth == c))
        denom = 2 * tp + fp + fn
        scores.append(2.0 * tp / denom if denom else 0.0)
    return 100.0 * float(np.mean(scores))


def cluster_f1(assignments: np.ndarray, true_labels) -> float:
    """Map clusters to classes by majority vote (ties to the smallest
    label), then macro-F1 percent against the truth."""
    truth = np.asarray(true_labels)
    assignments = np.asarray(assignments)
    if len(np.unique(truth)) < 2:
        raise XaneError("clustering truth is single-class")
    mapped = np.empty_like(truth)
    for c in np.unique(assignments):
        members = truth[assignments == c]
        labels, counts = np.unique(members, return_counts=True)
        mapped[assignments == c] = labels[counts.argmax()]  # unique() sorts
    return macro_f1(mapped, truth)


def truth_from_labels(labels) -> dict[str, float | None]:
    """Utterance-level regression truth per task from an AcousticLabels.

    Per-segment quantities collapse to their segment means; optional labels
    come through as None so reports can mark them n/a.
    """
    snrs = [s.snr_db for s in labels.segments if s.snr_db is not None]
    return {
        "c50_db": labels.c50_db, "t60_ms": labels.t60_ms,
        "drr_db": labels.drr_db, "c5_db": labels.c5_db,
        "rvol_m3": labels.rvol_m3, "refc": labels.refc,
        "pesq": labels.pesq, "estoi": labels.estoi,
        "bitrate_kbps": labels.bitrate_kbps,
        "snr_db": float(np.mean(snrs)) if snrs else None,
        "vad": float(np.mean([s.vad_fraction for s in labels.segments])),
    }


def regression_report(estimates: dict[str, dict], truth: dict[str, dict],
                      ) -> dict[str, float | None]:
    """Per-task MAE in native units over the common utterance ids; tasks
    with no truth anywhere come back as None (reported n/a)."""
    ids = sorted(set(estimates) & set(truth))
    if not ids:
        raise XaneError("no common utterances between estimates and truth")
    report = {}
    for task in REGRESSION_TASKS:
        errs = [abs(estimates[u][task] - truth[u][task])
                for u in ids if truth[u].get(task) is not None]
        report[task] = float(np.mean(errs)) if errs else None
    return report


def classification_report(estimates: dict[str, dict], truth: dict[str, dict],
                          ) -> dict[str, float]:
    """Macro-F1 percent for noise_type, codec_type, and overlap."""
    ids = sorted(set(estimates) & set(truth))
    if not ids:
        raise XaneError("no common utterances between estimates and truth")
    report = {}
    for task in ("noise_type", "codec_type", "overlap"):
        pred = [str(estimates[u][task]) for u in ids]
        true = [str(truth[u][task]) for u in ids]
        report[task] = macro_f1(pred, true)
    return report


def measure_rtf(model, waveforms: list[Waveform], task_stats: np.ndarray,
                runs: int = 3) -> float:
    """Median over `runs` of processing time / audio time.

    Waveforms are in memory already, so timing covers feature extraction
    plus inference and excludes file I/O. Single-threaded by contract.
    """
    audio_s = sum(w.duration_s for w in waveforms)
    if audio_s < 10.0:
        raise XaneError(f"need >= 10 s of audio to measure RTF, got {audio_s:.1f}")
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        for w in waveforms:
            infer_utterance(model, w, task_stats)
        times.append(time.perf_counter() - t0)
    return float(np.median(times)) / audio_s


def write_embeddings_csv(path, ids: list[str], embeddings: np.ndarray) -> None:
    embeddings = np.asarray(embeddings)
    if embeddings.ndim != 2 or len(ids) != embeddings.shape[0]:
        raise XaneError("ids and embedding rows do not line up")
    with open(path, "w", encoding="utf-8") as fh:
        for utt_id, row in zip(ids, embeddings):
            fh.write(utt_id + "," + ",".join(f"{v:.17g}" for v in row) + "\n")


def read_embeddings_csv(path) -> tuple[list[str], np.ndarray]:
    ids, rows = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split(",")
            if len(parts) < 2:
                raise XaneError(f"bad embeddings row in {path}")
            ids.append(parts[0])
            rows.append([float(v) for v in parts[1:]])
    if not ids:
        raise XaneError(f"empty embeddings file {path}")
    return ids, np.asarray(rows)
