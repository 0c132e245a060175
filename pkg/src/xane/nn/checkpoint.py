"""Binary checkpoint format and best-two averaging.

Layout (little-endian): magic "XCKP", u32 version, u32 tensor count, then
per tensor {u32 name_len, name bytes, u32 rank, u32 dims..., f32 data},
then 11 x {f32 mean, f32 sd} regression-target stats, u32 epoch,
f32 val_loss. Tensors are float32 on disk, float64 in memory.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from xane.errors import XaneError

MAGIC = b"XCKP"
VERSION = 1
N_REG_TASKS = 11


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    task_stats: np.ndarray  # (11, 2) mean/sd per regression task
    epoch: int = 0
    val_loss: float = 0.0

    def __post_init__(self):
        self.task_stats = np.asarray(self.task_stats, dtype=np.float64)
        if self.task_stats.shape != (N_REG_TASKS, 2):
            raise XaneError(f"task stats must be ({N_REG_TASKS}, 2), "
                            f"got {self.task_stats.shape}")
        if len(set(self.tensors)) != len(self.tensors):
            raise XaneError("duplicate tensor names")


def save_checkpoint(ck: Checkpoint, path: str | os.PathLike) -> None:
    parts = [struct.pack("<4sII", MAGIC, VERSION, len(ck.tensors))]
    for name, tensor in ck.tensors.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(tensor, dtype="<f4")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    stats = np.ascontiguousarray(ck.task_stats, dtype="<f4")
    parts.append(stats.tobytes())
    parts.append(struct.pack("<If", ck.epoch, ck.val_loss))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    with open(path, "rb") as fh:
        buf = fh.read()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise XaneError(f"truncated checkpoint file: {path}")
        pos += n
        return buf[pos - n:pos]

    magic, version, count = struct.unpack("<4sII", take(12))
    if magic != MAGIC:
        raise XaneError(f"not a checkpoint file: {path}")
    if version != VERSION:
        raise XaneError(f"unsupported checkpoint version {version}")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(take(4 * n), dtype="<f4").reshape(dims)
        tensors[name] = data.astype(np.float64)
    stats = np.frombuffer(take(4 * 2 * N_REG_TASKS), dtype="<f4")
    stats = stats.astype(np.float64).reshape(N_REG_TASKS, 2)
    epoch, val_loss = struct.unpack("<If", take(8))
    if pos != len(buf):
        raise XaneError(f"trailing bytes in checkpoint file: {path}")
    return Checkpoint(tensors=tensors, task_stats=stats, epoch=epoch,
                      val_loss=float(val_loss))


def average_checkpoints(a: Checkpoint, b: Checkpoint) -> Checkpoint:
    """Elementwise mean of every tensor; the target stats must match."""
    if set(a.tensors) != set(b.tensors):
        raise XaneError("checkpoint tensor names do not match")
    for name in a.tensors:
        if a.tensors[name].shape != b.tensors[name].shape:
            raise XaneError(f"shape mismatch for tensor {name}")
    if not np.array_equal(a.task_stats, b.task_stats):
        raise XaneError("checkpoint target stats differ; both must come "
                        "from the same training set")
    avg = {name: 0.5 * (a.tensors[name] + b.tensors[name]) for name in a.tensors}
    return Checkpoint(tensors=avg, task_stats=a.task_stats.copy(),
                      epoch=max(a.epoch, b.epoch),
                      val_loss=min(a.val_loss, b.val_loss))
