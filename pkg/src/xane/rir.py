"""Shoebox room-impulse-response generation by the image-source method.

The simulator returns both the impulse response and its generating
parameters (room volume, reflection coefficient), which double as exact
ground-truth labels for the reverberation regression tasks.

Conventions, recorded here because they matter for reproducibility:
  * one scalar reflection coefficient `beta` for all six walls;
  * impulses placed at the nearest sample (no fractional-delay filter);
  * no post high-pass filter: labels are computed from the raw response.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, asdict

import numpy as np

from xane import SAMPLE_RATE
from xane.audio import Waveform, write_wav, read_wav
from xane.errors import ConfigError, XaneError

MAX_ORDER_CAP = 40


def _default_max_order(beta: float) -> int:
    # smallest order with beta^order < 1e-6, capped
    if beta <= 0.0:
        return 0
    return min(MAX_ORDER_CAP, int(math.ceil(math.log(1e-6) / math.log(beta))))


def _eyring_t60_s(dims, beta: float) -> float:
    if beta <= 0.0:
        return 0.0
    lx, ly, lz = dims
    volume = lx * ly * lz
    surface = 2.0 * (lx * ly + lx * lz + ly * lz)
    return 0.161 * volume / (-surface * math.log(beta * beta))


@dataclass
class RoomSpec:
    dims: tuple[float, float, float]
    beta: float
    src: tuple[float, float, float]
    mic: tuple[float, float, float]
    c: float = 343.0
    max_order: int | None = None
    length_s: float | None = None

    def __post_init__(self):
        self.dims = tuple(float(v) for v in self.dims)
        self.src = tuple(float(v) for v in self.src)
        self.mic = tuple(float(v) for v in self.mic)
        if len(self.dims) != 3 or min(self.dims) <= 0.0:
            raise ConfigError(f"room dims must be three positive lengths, got {self.dims}")
        if not (0.0 <= self.beta < 1.0):
            raise ConfigError(f"reflection coefficient must be in [0, 1), got {self.beta}")
        for name, p in (("src", self.src), ("mic", self.mic)):
            if len(p) != 3 or any(not (0.0 < p[i] < self.dims[i]) for i in range(3)):
                raise ConfigError(f"{name} {p} not strictly inside room {self.dims}")
        if self.c <= 0.0:
            raise ConfigError("speed of sound must be positive")
        if self.max_order is None:
            self.max_order = _default_max_order(self.beta)
        if self.max_order < 0:
            raise ConfigError("max_order must be >= 0")
        if self.length_s is None:
            self.length_s = max(0.5, 1.5 * _eyring_t60_s(self.dims, self.beta))
        if self.length_s <= 0.0:
            raise ConfigError("length_s must be positive")

    @property
    def volume_m3(self) -> float:
        return self.dims[0] * self.dims[1] * self.dims[2]

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "RoomSpec":
        return cls(
            dims=tuple(d["dims"]), beta=d["beta"], src=tuple(d["src"]), mic=tuple(d["mic"]),
            c=d.get("c", 343.0), max_order=d.get("max_order"), length_s=d.get("length_s"),
        )


@dataclass
class Rir:
    samples: np.ndarray
    spec: RoomSpec
    direct_index: int

    @property
    def sample_rate(self) -> int:
        return SAMPLE_RATE


def image_sources(spec: RoomSpec) -> tuple[np.ndarray, np.ndarray]:
    """Enumerate image-source positions and reflection counts.

    Mirrored-room lattice parameterization: per axis a, the images of the
    source sit at (1 - 2*p) * src_a + 2 * r * L_a for p in {0, 1}, r integer,
    contributing |r + p| + |r| reflections on that axis. Returns
    (positions (N,3), counts (N,)) for all images with total count
    <= max_order; each image carries amplitude weight beta^count.
    """
    mo = spec.max_order
    half = (mo + 1) // 2 + 1
    r = np.arange(-half, half + 1)
    axes = []  # per axis: (positions, counts) over the (p, r) grid
    for a in range(3):
        pos0 = spec.src[a] + 2.0 * r * spec.dims[a]          # p = 0
        cnt0 = 2 * np.abs(r)
        pos1 = -spec.src[a] + 2.0 * r * spec.dims[a]         # p = 1
        cnt1 = np.abs(-r + 1) + np.abs(-r)
        axes.append((np.concatenate([pos0, pos1]), np.concatenate([cnt0, cnt1])))
    px, cx = axes[0]
    py, cy = axes[1]
    pz, cz = axes[2]
    total = cx[:, None, None] + cy[None, :, None] + cz[None, None, :]
    keep = total <= mo
    ix, iy, iz = np.nonzero(keep)
    positions = np.stack([px[ix], py[iy], pz[iz]], axis=1)
    return positions, total[keep]


def simulate_rir(spec: RoomSpec) -> Rir:
    """Image-method RIR: for each image at distance d, add
    beta^reflections / (4*pi*d) at the nearest sample round(d/c * fs)."""
    src = np.asarray(spec.src)
    mic = np.asarray(spec.mic)
    d_direct = float(np.linalg.norm(src - mic))
    if d_direct == 0.0:
        raise XaneError("source and microphone coincide")
    n = int(round(spec.length_s * SAMPLE_RATE))
    h = np.zeros(n)
    positions, counts = image_sources(spec)
    dists = np.linalg.norm(positions - mic[None, :], axis=1)
    idx = np.round(dists / spec.c * SAMPLE_RATE).astype(np.int64)
    amps = spec.beta ** counts.astype(np.float64) / (4.0 * np.pi * dists)
    valid = idx < n
    np.add.at(h, idx[valid], amps[valid])
    direct_index = int(round(d_direct / spec.c * SAMPLE_RATE))
    return Rir(h, spec, direct_index)


def save_rir(rir: Rir, wav_path: str | os.PathLike) -> str:
    """Write the RIR as a float32 WAV plus a JSON sidecar with the RoomSpec.

    Returns the sidecar path. The float32 cast is applied to the in-memory
    samples too, so labels derived later from the file match exactly.
    """
    rir.samples = rir.samples.astype(np.float32).astype(np.float64)
    write_wav(wav_path, Waveform(rir.samples), fmt="float32")
    sidecar = str(wav_path) + ".json"
    with open(sidecar, "w", encoding="utf-8") as f:
        json.dump(rir.spec.to_json(), f, indent=1, sort_keys=True)
    return sidecar


def load_rir(wav_path: str | os.PathLike) -> Rir:
    w = read_wav(wav_path)
    with open(str(wav_path) + ".json", encoding="utf-8") as f:
        spec = RoomSpec.from_json(json.load(f))
    src = np.asarray(spec.src)
    mic = np.asarray(spec.mic)
    direct_index = int(round(float(np.linalg.norm(src - mic)) / spec.c * SAMPLE_RATE))
    return Rir(w.samples, spec, direct_index)
