"""Utterance-level inference.

Per 1 s segment the model emits normalized regression values, class logits,
and a 128-d embedding. Utterance estimates are the segment mean for the
regression tasks, a majority vote over per-segment argmax for each
classification task (ties broken by the highest mean posterior), and the
mean of segment embeddings.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from xane.audio import Waveform
from xane.data import denormalize_targets
from xane.errors import XaneError
from xane.features import FeatureMatrix, frames_per_segment, melfb, mvn
from xane.model import (CODEC_CLASSES, NOISE_CLASSES, REGRESSION_TASKS,
                        XaneModel)


@dataclass
class SegmentEstimate:
    start_ms: int
    regression: dict[str, float]
    noise_type: str
    codec_type: str
    overlap: bool
    embedding: np.ndarray


@dataclass
class UtteranceEstimates:
    regression: dict[str, float]
    noise_type: str
    codec_type: str
    overlap: bool
    embedding: np.ndarray
    segments: list[SegmentEstimate]


def softmax(v: np.ndarray) -> np.ndarray:
    z = np.exp(v - v.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def majority_vote(logits: np.ndarray) -> int:
    """Most frequent per-segment argmax over (n_seg, k) logits; ties go to
    the tied class with the highest mean posterior."""
    post = softmax(logits)
    votes = np.bincount(post.argmax(axis=1), minlength=logits.shape[1])
    tied = np.flatnonzero(votes == votes.max())
    if len(tied) == 1:
        return int(tied[0])
    mean_post = post.mean(axis=0)
    return int(tied[np.argmax(mean_post[tied])])


def _prepare(features) -> FeatureMatrix:
    if isinstance(features, Waveform):
        return mvn(melfb(features))
    if isinstance(features, FeatureMatrix):
        return features if features.normalized else mvn(features)
    raise XaneError(f"cannot infer from {type(features).__name__}")


def infer_utterance(model: XaneModel, features, task_stats: np.ndarray,
                    ) -> UtteranceEstimates:
    """`features` is a Waveform or a FeatureMatrix covering the utterance;
    `task_stats` is the (11, 2) de-normalization table from the checkpoint."""
    f = _prepare(features)
    fps = frames_per_segment(f.hop_ms)
    if fps != model.cfg.input_frames:
        raise XaneError(f"feature hop {f.hop_ms} ms gives {fps} frames per "
                        f"segment, model expects {model.cfg.input_frames}")
    if f.dim != model.cfg.input_dim:
        raise XaneError(f"feature dim {f.dim} does not match model "
                        f"input dim {model.cfg.input_dim}")
    n_seg = len(f) // fps
    if n_seg < 1:
        raise XaneError("utterance shorter than one full 1 s segment")

    model.train(False)
    x = np.stack([f.frames[i * fps:(i + 1) * fps] for i in range(n_seg)])
    out = model.forward(x)
    reg = denormalize_targets(out["regression"], task_stats)

    segments = []
    for i in range(n_seg):
        segments.append(SegmentEstimate(
            start_ms=i * 1000,
            regression=dict(zip(REGRESSION_TASKS, reg[i].tolist())),
            noise_type=NOISE_CLASSES[int(out["noise_logits"][i].argmax())],
            codec_type=CODEC_CLASSES[int(out["codec_logits"][i].argmax())],
            overlap=bool(out["overlap_logits"][i].argmax()),
            embedding=out["embedding"][i],
        ))
    return UtteranceEstimates(
        regression=dict(zip(REGRESSION_TASKS, reg.mean(axis=0).tolist())),
        noise_type=NOISE_CLASSES[majority_vote(out["noise_logits"])],
        codec_type=CODEC_CLASSES[majority_vote(out["codec_logits"])],
        overlap=bool(majority_vote(out["overlap_logits"])),
        embedding=out["embedding"].mean(axis=0),
        segments=segments,
    )
