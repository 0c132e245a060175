from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from xane import SAMPLE_RATE, SEGMENT_SAMPLES
from xane.audio import (Segment, Waveform, apply_peak_dbfs, convolve,
                        mix_at_snr, read_wav, segment_1s, write_wav)
from xane.errors import AudioFormatError, XaneError


def _sine(freq=440.0, dur_s=1.0, amp=0.5):
    t = np.arange(int(dur_s * SAMPLE_RATE)) / SAMPLE_RATE
    return Waveform(amp * np.sin(2 * np.pi * freq * t))


def test_waveform_rejects_nonfinite_and_stereo():
    with pytest.raises(AudioFormatError):
        Waveform(np.array([0.0, np.nan]))
    with pytest.raises(AudioFormatError):
        Waveform(np.zeros((10, 2)))


def test_wav_roundtrip_float32_is_lossless(tmp_path):
    w = _sine()
    path = tmp_path / "a.wav"
    write_wav(path, w, fmt="float32")
    back = read_wav(path)
    assert_array_equal(back.samples,
                       w.samples.astype(np.float32).astype(np.float64))


def test_wav_roundtrip_pcm16_within_quantization(tmp_path):
    w = _sine()
    path = tmp_path / "a.wav"
    write_wav(path, w, fmt="pcm16")
    back = read_wav(path)
    assert np.max(np.abs(back.samples - w.samples)) <= 1.0 / 32768.0


def test_read_wav_rejects_wrong_rate(tmp_path):
    import scipy.io.wavfile
    path = tmp_path / "bad.wav"
    scipy.io.wavfile.write(path, 8000, np.zeros(100, dtype=np.float32))
    with pytest.raises(AudioFormatError, match="sample rate"):
        read_wav(path)


def test_read_wav_missing_file():
    with pytest.raises(AudioFormatError, match="no such"):
        read_wav("/nonexistent/file.wav")


def test_segment_1s_tiling_and_remainder():
    segs = segment_1s(Waveform(np.zeros(3 * SEGMENT_SAMPLES + 123)))
    assert [s.start_sample for s in segs] == [0, 16000, 32000]
    assert all(s.length_samples == SEGMENT_SAMPLES for s in segs)
    assert segs[2].start_ms == 2000
    assert segment_1s(Waveform(np.zeros(SEGMENT_SAMPLES - 1))) == []


def test_segment_1s_empty_errors():
    with pytest.raises(XaneError):
        segment_1s(Waveform(np.zeros(0)))


def test_mix_at_snr_roundtrip_oracle():
    # A1 component: requested SNR is recovered from the returned parts
    rng = np.random.default_rng(3)
    target = Waveform(rng.standard_normal(SAMPLE_RATE))
    noise = Waveform(rng.standard_normal(SAMPLE_RATE))
    for snr_db in (-10.0, 0.0, 7.3, 30.0):
        mixed, scaled = mix_at_snr(target, noise, snr_db)
        achieved = 10.0 * np.log10(np.mean(target.samples**2)
                                   / np.mean(scaled.samples**2))
        assert abs(achieved - snr_db) < 1e-9
        assert_allclose(mixed.samples, target.samples + scaled.samples)


@settings(max_examples=25, deadline=None)
@given(snr_db=st.floats(min_value=-40, max_value=40),
       seed=st.integers(min_value=0, max_value=2**31))
def test_mix_at_snr_roundtrip_property(snr_db, seed):
    rng = np.random.default_rng(seed)
    target = Waveform(rng.standard_normal(2000) + 0.1)
    noise = Waveform(rng.standard_normal(2500))
    _, scaled = mix_at_snr(target, noise, snr_db)
    achieved = 10.0 * np.log10(np.mean(target.samples**2)
                               / np.mean(scaled.samples**2))
    assert abs(achieved - snr_db) < 1e-9


def test_mix_at_snr_rejects_short_noise_and_silence():
    w = _sine()
    with pytest.raises(XaneError, match="shorter"):
        mix_at_snr(w, Waveform(np.ones(100)), 10.0)
    with pytest.raises(XaneError, match="zero-power"):
        mix_at_snr(Waveform(np.zeros(1000)), Waveform(np.ones(1000)), 10.0)


def test_apply_peak_dbfs():
    w = _sine(amp=0.25)
    out = apply_peak_dbfs(w, -6.0)
    assert abs(20.0 * np.log10(np.max(np.abs(out.samples))) + 6.0) < 1e-9
    with pytest.raises(XaneError):
        apply_peak_dbfs(Waveform(np.zeros(100)), -3.0)


def test_convolve_matches_direct_sum_and_truncates():
    rng = np.random.default_rng(1)
    x = Waveform(rng.standard_normal(300))
    h = rng.standard_normal(50)
    out = convolve(x, h)
    assert len(out) == len(x)
    assert_allclose(out.samples, np.convolve(x.samples, h)[:300], atol=1e-9)


def test_convolve_with_unit_impulse_is_identity():
    w = _sine()
    out = convolve(w, np.array([1.0]))
    assert_allclose(out.samples, w.samples, atol=1e-12)
