"""Embedding runners: a pretrained WavLM (optional heavy deps) and a
deterministic spectral stand-in used for tests and fixtures.

Both consume a 16 kHz float waveform and return (T, 768) float32 at a
20 ms hop, T = ceil(n / 320).
"""
from __future__ import annotations

import logging

import numpy as np

log = logging.getLogger("wavlm_export")

SAMPLE_RATE = 16000
HOP = 320            # 20 ms
WIN = 400            # 25 ms
DIM = 768
N_FFT = 512


def _frame(x: np.ndarray) -> np.ndarray:
    n_frames = -(-len(x) // HOP)
    pad = (n_frames - 1) * HOP + WIN - len(x)
    x = np.pad(x, (0, max(pad, 0)))
    idx = np.arange(WIN)[None, :] + HOP * np.arange(n_frames)[:, None]
    return x[idx]


class StubRunner:
    """Deterministic spectral projection; no pretrained weights involved.

    Log-magnitude spectra of 25 ms Hann windows pushed through a fixed
    random projection and tanh. Content-dependent and reproducible, so
    exported files exercise the full import path of the consumer.
    """

    def __init__(self):
        rng = np.random.default_rng(np.random.SeedSequence(DIM))
        self._proj = rng.standard_normal((N_FFT // 2 + 1, DIM)) / 16.0
        self._win = np.hanning(WIN)

    def __call__(self, waveform: np.ndarray) -> np.ndarray:
        frames = _frame(waveform) * self._win
        spec = np.abs(np.fft.rfft(frames, n=N_FFT, axis=1))
        feats = np.tanh(np.log(spec + 1e-6) @ self._proj)
        return feats.astype(np.float32)


class WavlmRunner:
    """Real pretrained model; requires the optional torch + transformers
    extras. Output length may differ from ceil(n / 320) by one frame
    (the consumer tolerates +/- 1)."""

    def __init__(self, model_id: str, device: str, layer: int):
        try:
            import torch
            from transformers import WavLMModel
        except ImportError as exc:
            raise RuntimeError(
                f"model {model_id!r} needs the [wavlm] extras: {exc}")
        self._torch = torch
        self._layer = layer
        self._device = device
        self._model = WavLMModel.from_pretrained(model_id).to(device).eval()

    def __call__(self, waveform: np.ndarray) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            x = torch.as_tensor(waveform, dtype=torch.float32,
                                device=self._device)[None, :]
            out = self._model(x, output_hidden_states=self._layer != -1)
            h = (out.last_hidden_state if self._layer == -1
                 else out.hidden_states[self._layer])
        return h[0].cpu().numpy().astype(np.float32)


def make_runner(model_id: str, device: str = "cpu", layer: int = -1):
    if model_id == "stub":
        return StubRunner()
    return WavlmRunner(model_id, device, layer)
