"""Multi-task training loop.

Implements the two-phase loss schedule (classification-only warmup, then
joint), the low-speech VAD gate, plateau LR decay, and best-two checkpoint
averaging. The regression loss is one joint masked MSE over all 11 tasks in
normalized target space; Lc is the mean of the three cross entropies.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from xane.data import (SegmentDataset, compute_task_stats, normalize_targets)
from xane.errors import NumericsError, XaneError
from xane.model import REGRESSION_TASKS, ModelConfig, XaneModel, build_model
from xane.nn import (Adam, Checkpoint, ReduceLROnPlateau, average_checkpoints,
                     masked_mse, softmax_ce)

_VAD_IDX = REGRESSION_TASKS.index("vad")


@dataclass(frozen=True)
class LossSchedule:
    lambda_c: float
    lambda_r: float


# validation always scores the full objective so epochs are comparable
# across the schedule switch
VALIDATION_SCHEDULE = LossSchedule(lambda_c=0.3, lambda_r=1.0)


def loss_weights(epoch: int) -> LossSchedule:
    """(1, 0) for epochs 0-1, (0.3, 1) from epoch 2 on."""
    if epoch < 0:
        raise XaneError(f"epoch must be >= 0, got {epoch}")
    if epoch < 2:
        return LossSchedule(lambda_c=1.0, lambda_r=0.0)
    return LossSchedule(lambda_c=0.3, lambda_r=1.0)


@dataclass
class TrainHyper:
    epochs: int = 60
    batch_size: int = 256
    lr: float = 1e-4
    seed: int = 0
    lr_factor: float = 0.5
    lr_patience: int = 16


def batch_loss(model: XaneModel, feats: np.ndarray, targets: np.ndarray,
               masks: np.ndarray, noise_t: np.ndarray, codec_t: np.ndarray,
               overlap_t: np.ndarray, gate: np.ndarray,
               schedule: LossSchedule, backprop: bool) -> tuple[float, dict]:
    """Forward (and optionally backward) over one batch.

    `targets` are already normalized. Segments failing the speech gate
    contribute only through the VAD regression column; their class CE rows
    and other regression columns are masked to exactly zero.
    """
    out = model.forward(feats)
    gate_f = gate.astype(np.float64)
    m_eff = masks * gate_f[:, None]
    m_eff[:, _VAD_IDX] = masks[:, _VAD_IDX]

    l_reg, d_reg, _ = masked_mse(out["regression"], targets, m_eff)
    ce_n, d_n = softmax_ce(out["noise_logits"], noise_t, gate_f)
    ce_c, d_c = softmax_ce(out["codec_logits"], codec_t, gate_f)
    ce_o, d_o = softmax_ce(out["overlap_logits"], overlap_t, gate_f)
    l_class = (ce_n + ce_c + ce_o) / 3.0
    total = schedule.lambda_c * l_class + schedule.lambda_r * l_reg

    if backprop:
        third = schedule.lambda_c / 3.0
        model.backward(schedule.lambda_r * d_reg, third * d_n,
                       third * d_c, third * d_o)

    # weighted per-task contributions for the epoch log
    breakdown = {"loss_class": schedule.lambda_c * l_class,
                 "loss_reg": schedule.lambda_r * l_reg,
                 "ce_noise": schedule.lambda_c * ce_n,
                 "ce_codec": schedule.lambda_c * ce_c,
                 "ce_overlap": schedule.lambda_c * ce_o}
    err2 = (out["regression"] - targets) ** 2
    for j, task in enumerate(REGRESSION_TASKS):
        denom = max(m_eff[:, j].sum(), 1.0)
        breakdown[f"mse_{task}"] = schedule.lambda_r * float(
            (m_eff[:, j] * err2[:, j]).sum() / denom)
    return total, breakdown


def _run_epoch(model: XaneModel, ds: SegmentDataset, targets: np.ndarray,
               schedule: LossSchedule, batch_size: int,
               order: np.ndarray | None, opt: Adam | None) -> tuple[float, dict]:
    """One pass over `ds`; trains when `opt` is given, else evaluates."""
    n = len(ds)
    idx = order if order is not None else np.arange(n)
    total, sums = 0.0, {}
    for lo in range(0, n, batch_size):
        b = idx[lo:lo + batch_size]
        if opt is not None:
            model.zero_grad()
        loss, breakdown = batch_loss(
            model, ds.features[b], targets[b], ds.masks[b],
            ds.noise_targets[b], ds.codec_targets[b], ds.overlap_targets[b],
            ds.gate[b], schedule, backprop=opt is not None)
        if opt is not None:
            opt.step()
        total += loss * len(b)
        for k, v in breakdown.items():
            sums[k] = sums.get(k, 0.0) + v * len(b)
    return total / n, {k: v / n for k, v in sums.items()}


def train(train_ds: SegmentDataset, val_ds: SegmentDataset, cfg: ModelConfig,
          hyper: TrainHyper, log_path: str | os.PathLike | None = None,
          ) -> tuple[Checkpoint, list[dict]]:
    """Returns (final averaged checkpoint, per-epoch log rows).

    The final checkpoint is the elementwise mean of the two best-validation
    snapshots (the single best if only one epoch ran).
    """
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise XaneError("empty dataset")
    if hyper.epochs < 1 or hyper.batch_size < 1:
        raise XaneError("epochs and batch_size must be >= 1")

    stats = compute_task_stats(train_ds)
    y_train = normalize_targets(train_ds.targets, stats)
    y_val = normalize_targets(val_ds.targets, stats)

    model, _ = build_model(cfg, hyper.seed)
    opt = Adam(model.parameters(), lr=hyper.lr)
    plateau = ReduceLROnPlateau(opt, factor=hyper.lr_factor,
                                patience=hyper.lr_patience)
    # children 0 and 1 seed the model; child 2 keeps shuffling independent
    shuffle_rng = np.random.default_rng(
        np.random.SeedSequence(hyper.seed).spawn(3)[2])

    best: list[tuple[float, int, dict]] = []  # (val_loss, epoch, tensors)
    rows = []
    for epoch in range(hyper.epochs):
        sched = loss_weights(epoch)
        model.train(True)
        order = shuffle_rng.permutation(len(train_ds))
        train_loss, breakdown = _run_epoch(model, train_ds, y_train, sched,
                                           hyper.batch_size, order, opt)
        model.train(False)
        val_loss, _ = _run_epoch(model, val_ds, y_val, VALIDATION_SCHEDULE,
                                 hyper.batch_size, None, None)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise NumericsError(
                f"non-finite loss at epoch {epoch}: "
                f"train={train_loss!r} val={val_loss!r}")
        plateau.step(val_loss)

        best.append((val_loss, epoch, model.state()))
        best.sort(key=lambda item: (item[0], item[1]))
        del best[2:]

        row = {"epoch": epoch, "lambda_c": sched.lambda_c,
               "lambda_r": sched.lambda_r, "lr": opt.lr,
               "train_loss": train_loss, "val_loss": val_loss}
        row.update(breakdown)
        rows.append(row)

    cks = [Checkpoint(tensors=t, task_stats=stats, epoch=e, val_loss=v)
           for v, e, t in best]
    final = cks[0] if len(cks) == 1 else average_checkpoints(cks[0], cks[1])

    if log_path is not None:
        with open(log_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
    return final, rows
