"""Ground-truth acoustic parameters: clarity indices, T60, DRR from impulse
responses; energy VAD and per-segment SNR from waveforms.

Boundary conventions (standard practice; recorded because they are choices):
clarity/DRR windows are measured from the direct-path arrival, the DRR direct
window is +/-2.5 ms, T60 comes from a -5..-25 dB line fit on the Schroeder
curve, and both energy ratios are clamped to +/-60 dB so anechoic material
still yields finite regression targets.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from xane import SAMPLE_RATE, SEGMENT_SAMPLES
from xane.audio import Segment, Waveform
from xane.errors import NumericsError, XaneError
from xane.rir import Rir

EDC_FLOOR_DB = -300.0
CLAMP_DB = 60.0
VAD_FRAME_SAMPLES = 160  # 10 ms
VAD_DYNAMIC_RANGE_DB = 40.0
VAD_ABS_FLOOR_DBFS = -60.0

NOISE_TYPES = ("ambient", "babble", "music", "other", "white")
CODEC_TYPES = ("uncompressed", "opus_music", "opus_speech")


@dataclass
class EnergyDecayCurve:
    values_db: np.ndarray  # starts at 0 dB, non-increasing, floored
    sample_rate: int = SAMPLE_RATE


@dataclass
class SegmentLabels:
    start_ms: int
    vad_fraction: float
    snr_db: float | None = None  # absent when the segment has no noise power


@dataclass
class AcousticLabels:
    c50_db: float
    c5_db: float
    t60_ms: float
    drr_db: float
    rvol_m3: float
    refc: float
    snr_db: float  # utterance-level target SNR (not serialized in manifests)
    estoi: float
    noise_type: str
    codec_type: str
    overlap: bool
    pesq: float | None = None
    bitrate_kbps: float | None = None
    segments: list[SegmentLabels] = field(default_factory=list)

    def __post_init__(self):
        if self.noise_type not in NOISE_TYPES:
            raise XaneError(f"unknown noise type {self.noise_type!r}")
        if self.codec_type not in CODEC_TYPES:
            raise XaneError(f"unknown codec type {self.codec_type!r}")
        if (self.bitrate_kbps is not None) != (self.codec_type != "uncompressed"):
            raise XaneError("bitrate must be present exactly when a codec is applied")


def edc(h: Rir | np.ndarray) -> EnergyDecayCurve:
    """Schroeder backward integration, normalized to total energy, in dB."""
    samples = np.asarray(getattr(h, "samples", h), dtype=np.float64)
    energy = np.square(samples)
    total = energy.sum()
    if total <= 0.0:
        raise XaneError("zero-energy impulse response")
    tail = np.cumsum(energy[::-1])[::-1] / total
    with np.errstate(divide="ignore"):
        values = 10.0 * np.log10(tail)
    return EnergyDecayCurve(np.maximum(values, EDC_FLOOR_DB))


def t60_from_edc(curve: EnergyDecayCurve) -> float:
    """T60 in ms via T20-style extrapolation: least-squares line on the EDC
    between its -5 dB and -25 dB crossings, scaled to 60 dB of decay."""
    v = curve.values_db
    below5 = np.nonzero(v <= -5.0)[0]
    below25 = np.nonzero(v <= -25.0)[0]
    if len(below5) == 0 or len(below25) == 0:
        raise NumericsError("insufficient decay range: EDC never reaches -25 dB")
    i0, i1 = below5[0], below25[0]
    if i1 <= i0:
        raise NumericsError("insufficient decay range: -5..-25 dB span is empty")
    t = np.arange(i0, i1 + 1) / curve.sample_rate
    slope, _ = np.polyfit(t, v[i0 : i1 + 1], 1)
    if slope >= 0.0:
        raise NumericsError("non-decaying EDC in fit range")
    return float(-60.0 / slope * 1000.0)


def _clamped_ratio_db(num: float, den: float) -> float:
    if den <= 0.0:
        return CLAMP_DB
    if num <= 0.0:
        return -CLAMP_DB
    return float(np.clip(10.0 * np.log10(num / den), -CLAMP_DB, CLAMP_DB))


def clarity(h: Rir, boundary_ms: float) -> float:
    """Early-to-late energy ratio in dB; the early window starts at the
    direct-path arrival. C50 is clarity(h, 50), C5 is clarity(h, 5)."""
    energy = np.square(np.asarray(h.samples, dtype=np.float64))
    if energy.sum() <= 0.0:
        raise XaneError("zero-energy impulse response")
    split = h.direct_index + int(round(boundary_ms * 1e-3 * SAMPLE_RATE))
    early = energy[h.direct_index : split].sum()
    late = energy[split:].sum()
    return _clamped_ratio_db(early, late)


def drr(h: Rir) -> float:
    """Direct-to-reverberant ratio in dB; direct window is +/-2.5 ms around
    the direct-path arrival, reverberant is all remaining energy."""
    energy = np.square(np.asarray(h.samples, dtype=np.float64))
    if energy.sum() <= 0.0:
        raise XaneError("zero-energy impulse response")
    half = int(round(2.5e-3 * SAMPLE_RATE))
    lo = max(0, h.direct_index - half)
    hi = min(len(energy), h.direct_index + half + 1)
    direct = energy[lo:hi].sum()
    return _clamped_ratio_db(direct, energy.sum() - direct)


def energy_vad(clean: Waveform) -> np.ndarray:
    """Boolean speech activity per 10 ms frame of the clean signal.

    A frame is active iff its RMS exceeds max(peak frame RMS - 40 dB,
    -60 dBFS): a dynamic threshold with an absolute floor.
    """
    n_frames = len(clean) // VAD_FRAME_SAMPLES
    if n_frames == 0:
        return np.zeros(0, dtype=bool)
    x = clean.samples[: n_frames * VAD_FRAME_SAMPLES].reshape(n_frames, VAD_FRAME_SAMPLES)
    rms = np.sqrt(np.mean(np.square(x), axis=1))
    with np.errstate(divide="ignore"):
        rms_db = 20.0 * np.log10(rms)
    peak_db = rms_db.max() if len(rms_db) else -np.inf
    threshold_db = max(peak_db - VAD_DYNAMIC_RANGE_DB, VAD_ABS_FLOOR_DBFS)
    return rms_db > threshold_db


def vad_fraction(frames: np.ndarray, seg: Segment) -> float:
    """Mean of the 10 ms VAD frames inside the segment (100 per 1 s)."""
    lo = seg.start_sample // VAD_FRAME_SAMPLES
    hi = (seg.start_sample + seg.length_samples) // VAD_FRAME_SAMPLES
    if hi > len(frames):
        raise XaneError("VAD frames do not cover the segment")
    return float(np.mean(frames[lo:hi]))


def segment_snr(signal: Waveform, scaled_noise: Waveform, seg: Segment) -> float | None:
    """Exact per-segment SNR in dB given the retained scaled-noise signal.

    `signal` is the speech component the noise was scaled against (the
    reverberant mix, pre-noise). Returns None when the segment carries no
    noise power: the label is absent and the loss masks it.
    """
    sl = slice(seg.start_sample, seg.start_sample + seg.length_samples)
    p_sig = float(np.mean(np.square(signal.samples[sl])))
    p_noise = float(np.mean(np.square(scaled_noise.samples[sl])))
    if p_noise == 0.0:
        return None
    if p_sig == 0.0:
        return -CLAMP_DB
    return float(10.0 * np.log10(p_sig / p_noise))
