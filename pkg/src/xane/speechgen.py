"""Synthetic speech-like test material.

Generates utterances from glottal impulse trains shaped by a per-speaker
formant stack, grouped into syllables and words with per-syllable gains,
occasional fricative-like bursts, and silent gaps. The material is not
speech, but it has the properties the pipeline cares about: harmonic
structure with speaker-dependent f0/formants and rhythm, strong syllabic
amplitude modulation (so overlapped mixtures stay separable from
single-speaker audio even after reverberation smears the pauses), and
real pauses (so the energy VAD produces a spread of per-segment speech
fractions).
"""
from __future__ import annotations

import os

import numpy as np
from scipy.signal import lfilter

from xane import SAMPLE_RATE
from xane.audio import Waveform, write_wav


def _resonator(freq_hz: float, bw_hz: float) -> tuple[np.ndarray, np.ndarray]:
    """Two-pole resonator coefficients at the given center frequency."""
    r = np.exp(-np.pi * bw_hz / SAMPLE_RATE)
    theta = 2.0 * np.pi * freq_hz / SAMPLE_RATE
    a = np.array([1.0, -2.0 * r * np.cos(theta), r * r])
    return np.array([1.0 - r]), a


# rough F1/F2 vowel targets (Hz); each syllable picks one, so a voice keeps
# moving through the spectrum the way running speech does
_VOWELS = ((310.0, 2020.0), (360.0, 640.0), (500.0, 1700.0),
           (680.0, 1100.0), (850.0, 1610.0), (600.0, 880.0))


class SpeakerVoice:
    """Fixed f0, vocal-tract scale, and speaking rhythm for one synthetic
    speaker; formants move per syllable over a shared vowel inventory."""

    def __init__(self, rng: np.random.Generator, f0: float | None = None):
        self.f0 = float(f0) if f0 is not None else rng.uniform(95.0, 235.0)
        self.rate = rng.uniform(0.8, 1.3)  # syllable and gap lengths scale with 1/rate
        self.tract = rng.uniform(0.92, 1.08)
        self.bws = (rng.uniform(60.0, 100.0), rng.uniform(90.0, 140.0),
                    rng.uniform(140.0, 200.0))

    def _formants(self, rng: np.random.Generator):
        f1, f2 = _VOWELS[int(rng.integers(len(_VOWELS)))]
        f3 = rng.uniform(2400.0, 3100.0)
        jit = rng.uniform(0.96, 1.04, size=3)
        return ((f1 * self.tract * jit[0], self.bws[0]),
                (f2 * self.tract * jit[1], self.bws[1]),
                (f3 * self.tract * jit[2], self.bws[2]))

    def _voiced(self, dur_s: float, rng: np.random.Generator) -> np.ndarray:
        n = int(round(dur_s * SAMPLE_RATE))
        # impulse train: f0 moves between syllables but stays near-steady
        # within one, so short-time frames carry a clean harmonic comb
        excitation = np.zeros(n)
        pos, f0 = 0, self.f0 * rng.uniform(0.9, 1.1)
        while pos < n:
            excitation[pos] = 1.0
            f0 *= rng.uniform(0.998, 1.002)
            pos += max(int(round(SAMPLE_RATE / f0)), 32)
        excitation += 0.01 * rng.standard_normal(n)  # aspiration
        x = excitation
        for freq, bw in self._formants(rng):
            b, a = _resonator(freq, bw)
            x = lfilter(b, a, x)
        ramp = min(int(0.02 * SAMPLE_RATE), n // 4)
        env = np.ones(n)
        env[:ramp] = np.linspace(0.0, 1.0, ramp)
        env[-ramp:] = np.linspace(1.0, 0.0, ramp)
        return x * env

    def _burst(self, dur_s: float, rng: np.random.Generator) -> np.ndarray:
        """Fricative-like noise burst above the voiced formants."""
        n = int(round(dur_s * SAMPLE_RATE))
        b, a = _resonator(rng.uniform(2800.0, 5600.0), rng.uniform(500.0, 1000.0))
        x = lfilter(b, a, rng.standard_normal(n))
        ramp = max(min(int(0.008 * SAMPLE_RATE), n // 4), 1)
        env = np.ones(n)
        env[:ramp] = np.linspace(0.0, 1.0, ramp)
        env[-ramp:] = np.linspace(1.0, 0.0, ramp)
        return x * env

    def utterance(self, dur_s: float, rng: np.random.Generator) -> Waveform:
        n = int(round(dur_s * SAMPLE_RATE))
        out = np.zeros(n)
        pos = int(rng.uniform(0.0, 0.1) * SAMPLE_RATE)
        while pos < n:
            # one word: a few syllables with independent gains, then a gap
            for _ in range(int(rng.integers(1, 5))):
                if rng.random() < 0.15:
                    seg = self._burst(rng.uniform(0.05, 0.12) / self.rate, rng)
                    gain = rng.uniform(0.15, 0.45)
                else:
                    seg = self._voiced(rng.uniform(0.09, 0.22) / self.rate, rng)
                    gain = rng.uniform(0.35, 1.0)
                rms = np.sqrt(np.mean(seg * seg))
                if rms > 0.0:
                    seg = seg * (gain / rms)
                end = min(pos + len(seg), n)
                out[pos:end] += seg[: end - pos]
                pos = end + int(round(rng.uniform(0.02, 0.08) / self.rate * SAMPLE_RATE))
                if pos >= n:
                    break
            gap = rng.uniform(0.6, 1.0) if rng.random() < 0.15 else rng.uniform(0.25, 0.55)
            pos += int(round(gap / self.rate * SAMPLE_RATE))
        peak = np.abs(out).max()
        if peak > 0.0:
            out *= 0.5 / peak
        return Waveform(out)


def generate_corpus(out_dir: str | os.PathLike, n_speakers: int,
                    utts_per_speaker: int, seed: int,
                    dur_range_s: tuple[float, float] = (2.2, 3.8)) -> list[str]:
    """Writes spk<i>_utt<j>.wav files; the speaker id is the stem prefix
    before the first underscore. Returns the sorted file list."""
    os.makedirs(out_dir, exist_ok=True)
    master = np.random.SeedSequence(seed)
    # log-spaced f0 slots keep any two speakers' harmonic combs apart
    slots = 88.0 * (272.0 / 88.0) ** ((np.arange(n_speakers) + 0.5) / n_speakers)
    paths = []
    for i, spk_ss in enumerate(master.spawn(n_speakers)):
        rng = np.random.default_rng(spk_ss)
        voice = SpeakerVoice(rng, f0=slots[i] * rng.uniform(0.995, 1.005))
        for j in range(utts_per_speaker):
            dur = rng.uniform(*dur_range_s)
            w = voice.utterance(dur, rng)
            path = os.path.join(out_dir, f"spk{i:02d}_utt{j:02d}.wav")
            write_wav(path, w, fmt="pcm16")
            paths.append(path)
    return sorted(paths)
