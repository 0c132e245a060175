"""Training losses with analytic gradients w.r.t. the predictions."""
from __future__ import annotations

import numpy as np

from xane.errors import XaneError


def softmax_ce(logits: np.ndarray, targets: np.ndarray,
               mask: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Max-subtracted cross entropy averaged over unmasked rows.

    logits (N, K), integer targets (N,). Returns (loss, dlogits).
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    n, k = logits.shape
    if targets.shape != (n,):
        raise XaneError(f"targets shape {targets.shape} does not match {n} rows")
    if np.any((targets < 0) | (targets >= k)):
        raise XaneError(f"class target out of range for {k} classes")
    m = np.ones(n) if mask is None else np.asarray(mask, dtype=np.float64)
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    ce = lse - z[np.arange(n), targets]
    denom = max(m.sum(), 1.0)
    probs = np.exp(z - lse[:, None])
    dlogits = probs
    dlogits[np.arange(n), targets] -= 1.0
    dlogits *= m[:, None] / denom
    return float((m * ce).sum() / denom), dlogits


def masked_mse(pred: np.ndarray, target: np.ndarray,
               mask: np.ndarray) -> tuple[float, np.ndarray, int]:
    """sum(mask * err^2) / max(sum(mask), 1) with dpred and the active count.

    An all-zero mask yields loss 0 with count 0 so callers can flag the
    no-contribution case.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    if not (pred.shape == target.shape == m.shape):
        raise XaneError(f"shape mismatch: {pred.shape} vs {target.shape} vs {m.shape}")
    err = pred - target
    denom = max(m.sum(), 1.0)
    loss = float((m * err * err).sum() / denom)
    return loss, 2.0 * m * err / denom, int(round(m.sum()))
