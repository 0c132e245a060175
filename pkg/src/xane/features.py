"""Waveform-to-feature conversion and the shared binary feature format.

Native features are 80-d log Mel filterbank energies from 25 ms Hann
windows at a 10 ms hop, framed centered with reflective padding so 1.0 s
of audio yields exactly 100 frames. Imported features (768-d at a 20 ms
hop) arrive through the same "XFEA" file format written by the external
export script; normalization happens here for both paths.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from xane import SAMPLE_RATE
from xane.audio import Waveform
from xane.errors import AudioFormatError, XaneError

WIN_SAMPLES = 400  # 25 ms
HOP_SAMPLES = 160  # 10 ms
NFFT = 512
N_MELS = 80
FMIN_HZ = 0.0
FMAX_HZ = 8000.0
LOG_FLOOR = 1e-10

MAGIC = b"XFEA"
VERSION = 1


@dataclass
class FeatureMatrix:
    frames: np.ndarray  # (T, D)
    hop_ms: float
    normalized: bool = False

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise XaneError(f"feature matrix must be 2-D, got shape {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise XaneError("feature matrix contains NaN or Inf")

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def __len__(self) -> int:
        return self.frames.shape[0]


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank() -> np.ndarray:
    """(N_MELS, NFFT//2+1) triangular filters on the power spectrum."""
    edges_hz = _mel_to_hz(np.linspace(_hz_to_mel(FMIN_HZ), _hz_to_mel(FMAX_HZ), N_MELS + 2))
    bins_hz = np.fft.rfftfreq(NFFT, d=1.0 / SAMPLE_RATE)
    fb = np.zeros((N_MELS, len(bins_hz)))
    for i in range(N_MELS):
        lo, mid, hi = edges_hz[i], edges_hz[i + 1], edges_hz[i + 2]
        up = (bins_hz - lo) / (mid - lo)
        down = (hi - bins_hz) / (hi - mid)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
    return fb


_FILTERBANK: np.ndarray | None = None


def _filterbank() -> np.ndarray:
    global _FILTERBANK
    if _FILTERBANK is None:
        _FILTERBANK = mel_filterbank()
    return _FILTERBANK


def melfb(w: Waveform) -> FeatureMatrix:
    """80-d log-MelFB features, one frame per 10 ms (100 per second).

    Frames are centered at n*hop with reflective padding; each 25 ms Hann
    window is zero-padded to a 512-point FFT; filter energies are floored
    at 1e-10 before the natural log.
    """
    x = w.samples
    if len(x) < WIN_SAMPLES:
        raise XaneError(f"input too short for feature extraction: {len(x)} samples")
    half = WIN_SAMPLES // 2
    padded = np.pad(x, half, mode="reflect")
    n_frames = int(np.ceil(len(x) / HOP_SAMPLES))
    idx = np.arange(WIN_SAMPLES)[None, :] + HOP_SAMPLES * np.arange(n_frames)[:, None]
    window = np.hanning(WIN_SAMPLES + 2)[1:-1]
    frames = padded[idx] * window
    spec = np.fft.rfft(frames, n=NFFT, axis=1)
    power = np.square(np.abs(spec))
    energies = power @ _filterbank().T
    return FeatureMatrix(np.log(np.maximum(energies, LOG_FLOOR)), hop_ms=10.0)


def mvn(f: FeatureMatrix) -> FeatureMatrix:
    """Per-utterance mean/variance normalization of each coefficient.

    Zero-variance coefficients map to zeros. Idempotent.
    """
    if len(f) < 2:
        raise XaneError("mvn needs at least 2 frames")
    mean = f.frames.mean(axis=0)
    sd = f.frames.std(axis=0)
    out = np.where(sd > 0.0, (f.frames - mean) / np.where(sd > 0.0, sd, 1.0), 0.0)
    return FeatureMatrix(out, hop_ms=f.hop_ms, normalized=True)


def frames_per_segment(hop_ms: float) -> int:
    """Frames in one 1 s segment; the hop must divide 1000 ms."""
    n = 1000.0 / hop_ms
    if abs(n - round(n)) > 1e-9:
        raise XaneError(f"hop of {hop_ms} ms does not divide 1000 ms")
    return int(round(n))


def write_features(f: FeatureMatrix, path: str | os.PathLike) -> None:
    """Binary layout (little-endian): magic "XFEA", u32 version, u32 T,
    u32 D, f32 hop_ms, u8 normalized, then T*D f32 values row-major."""
    t, d = f.frames.shape
    header = struct.pack("<4sIIIfB", MAGIC, VERSION, t, d, f.hop_ms, int(f.normalized))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(f.frames.astype("<f4").tobytes())


def read_features(path: str | os.PathLike) -> FeatureMatrix:
    with open(path, "rb") as fh:
        header = fh.read(struct.calcsize("<4sIIIfB"))
        if len(header) < struct.calcsize("<4sIIIfB"):
            raise AudioFormatError(f"truncated feature file header: {path}")
        magic, version, t, d, hop_ms, normalized = struct.unpack("<4sIIIfB", header)
        if magic != MAGIC:
            raise AudioFormatError(f"not a feature file: {path}")
        if version != VERSION:
            raise AudioFormatError(f"unsupported feature file version {version}: {path}")
        payload = fh.read(4 * t * d)
        if len(payload) != 4 * t * d:
            raise AudioFormatError(f"truncated feature payload in {path}: "
                                   f"expected {4 * t * d} bytes, got {len(payload)}")
        frames = np.frombuffer(payload, dtype="<f4").reshape(t, d).astype(np.float64)
    return FeatureMatrix(frames, hop_ms=float(hop_ms), normalized=bool(normalized))
