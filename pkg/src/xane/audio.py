"""Waveform I/O, segmentation, gain staging, SNR mixing and convolution.

Everything here is a pure function on immutable inputs; all audio is mono
16 kHz float in [-1, 1]. Samples are never clipped after mixing or gain:
the synthesis pipeline renormalizes once at the end so that SNR ground
truth stays exact.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import scipy.io.wavfile
import scipy.signal

from xane import SAMPLE_RATE, SEGMENT_SAMPLES
from xane.errors import AudioFormatError, XaneError


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise AudioFormatError(f"expected mono samples, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise AudioFormatError("waveform contains NaN or Inf samples")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class Segment:
    """A 1 s analysis window: [start_sample, start_sample + length_samples)."""

    start_sample: int
    length_samples: int = SEGMENT_SAMPLES

    @property
    def start_ms(self) -> int:
        return self.start_sample * 1000 // SAMPLE_RATE


def read_wav(path: str | os.PathLike) -> Waveform:
    """Read a mono (or downmixable) PCM16 / float32 RIFF WAV at 16 kHz.

    Other sample rates are rejected: there is no resampler in this toolkit.
    """
    if not os.path.exists(path):
        raise AudioFormatError(f"no such audio file: {path}")
    try:
        rate, data = scipy.io.wavfile.read(path)
    except ValueError as exc:
        raise AudioFormatError(f"unreadable WAV file {path}: {exc}") from exc
    if rate != SAMPLE_RATE:
        raise AudioFormatError(f"unsupported sample rate {rate} Hz in {path} (need {SAMPLE_RATE})")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise AudioFormatError(f"unsupported encoding {data.dtype} in {path} (need int16 or float32)")
    if samples.ndim == 2:  # downmix channels
        samples = samples.mean(axis=1)
    return Waveform(samples, rate)


def write_wav(path: str | os.PathLike, w: Waveform, fmt: str = "float32") -> None:
    """Write a WAV file; fmt is 'float32' (lossless for our data) or 'pcm16'."""
    if fmt == "float32":
        scipy.io.wavfile.write(path, w.sample_rate, w.samples.astype(np.float32))
    elif fmt == "pcm16":
        clipped = np.clip(w.samples, -1.0, 32767.0 / 32768.0)
        scipy.io.wavfile.write(path, w.sample_rate, np.round(clipped * 32768.0).astype(np.int16))
    else:
        raise ValueError(f"unknown wav format {fmt!r}")


def segment_1s(w: Waveform) -> list[Segment]:
    """Tile the waveform with non-overlapping 1 s segments.

    A trailing remainder shorter than 1 s is dropped, keeping per-segment
    label semantics exact.
    """
    if len(w) == 0:
        raise XaneError("cannot segment an empty waveform")
    n = len(w) // SEGMENT_SAMPLES
    return [Segment(i * SEGMENT_SAMPLES) for i in range(n)]


def _power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x))) if len(x) else 0.0


def mix_at_snr(target: Waveform, noise: Waveform, snr_db: float) -> tuple[Waveform, Waveform]:
    """Scale `noise` so the mix hits `snr_db`, then add it to `target`.

    Noise longer than the target is cropped from the front (looping a short
    noise is the synthesis pipeline's concern). Returns (mixed, scaled_noise);
    the exact scaled noise is what makes per-segment SNR labels computable
    downstream.
    """
    if len(noise) < len(target):
        raise XaneError(f"noise ({len(noise)} samples) shorter than target ({len(target)})")
    cropped = noise.samples[: len(target)]
    p_t = _power(target.samples)
    p_n = _power(cropped)
    if p_t == 0.0:
        raise XaneError("zero-power target in mix_at_snr")
    if p_n == 0.0:
        raise XaneError("zero-power noise in mix_at_snr")
    scale = np.sqrt(p_t / (p_n * 10.0 ** (snr_db / 10.0)))
    scaled = cropped * scale
    return Waveform(target.samples + scaled), Waveform(scaled)


def apply_peak_dbfs(w: Waveform, peak_dbfs: float) -> Waveform:
    """Rescale so the peak magnitude sits at `peak_dbfs` dB re full scale."""
    peak = float(np.max(np.abs(w.samples))) if len(w) else 0.0
    if peak == 0.0:
        raise XaneError("cannot level a zero signal")
    return Waveform(w.samples * (10.0 ** (peak_dbfs / 20.0) / peak))


def convolve(w: Waveform, h) -> Waveform:
    """Linear convolution with an impulse response, truncated to len(w).

    Truncation keeps clean/degraded pairs sample-aligned for ESTOI and the
    SNR labels. `h` may be a bare array or anything with a `.samples` array
    at 16 kHz. FFT-based; matches the direct sum within 1e-6.
    """
    taps = np.asarray(getattr(h, "samples", h), dtype=np.float64)
    if len(w) == 0 or len(taps) == 0:
        raise XaneError("convolve requires non-empty input and impulse response")
    out = scipy.signal.fftconvolve(w.samples, taps, mode="full")[: len(w)]
    return Waveform(out)
