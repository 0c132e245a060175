"""Stand-in lossy codec for tests and desk-scale synthesis.

Real Opus is out of scope; the synthesis pipeline only needs an external
command that degrades audio deterministically, with severity tied to the
bitrate argument, while preserving length and time alignment (all filtering
is zero-phase so intrusive metrics stay meaningful).

    python -m xane.stub_codec --mode speech --bitrate 24 in.wav out.wav

speech mode: mu-law companded requantization (harsher at low bitrates).
music mode: linear bitcrush plus a zero-phase lowpass whose cutoff rises
with bitrate. Exit status 0 on success, 1 on any failure.
"""
from __future__ import annotations

import argparse
import sys

import numpy as np
from scipy.signal import butter, filtfilt

from xane import SAMPLE_RATE
from xane.audio import Waveform, read_wav, write_wav

MU = 255.0


def degrade(x: np.ndarray, mode: str, bitrate_kbps: float) -> np.ndarray:
    if mode == "speech":
        levels = 2.0 ** int(3 + bitrate_kbps / 6)  # 8 kbps -> 16, 64 -> 8192
        comp = np.sign(x) * np.log1p(MU * np.abs(x)) / np.log1p(MU)
        comp = np.round(comp * levels) / levels
        return np.sign(comp) * np.expm1(np.abs(comp) * np.log1p(MU)) / MU
    if mode == "music":
        levels = 2.0 ** int(3 + bitrate_kbps / 8)  # 8 kbps -> 16, 64 -> 2048
        # quantizer step rides the content peak so quiet inputs survive
        peak = float(np.max(np.abs(x)))
        scale = peak if peak > 0.0 else 1.0
        y = np.round(x / scale * levels) / levels * scale
        cutoff_hz = min(1500.0 + 90.0 * bitrate_kbps, 0.45 * SAMPLE_RATE)
        b, a = butter(4, cutoff_hz / (SAMPLE_RATE / 2.0))
        return filtfilt(b, a, y)
    raise ValueError(f"unknown mode {mode!r}")


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="stub_codec", description=__doc__)
    ap.add_argument("--mode", choices=("speech", "music"), required=True)
    ap.add_argument("--bitrate", type=float, required=True)
    ap.add_argument("infile")
    ap.add_argument("outfile")
    args = ap.parse_args(argv)
    try:
        if not 1.0 <= args.bitrate <= 512.0:
            raise ValueError(f"bitrate {args.bitrate} out of range")
        w = read_wav(args.infile)
        y = degrade(w.samples, args.mode, args.bitrate)
        write_wav(args.outfile, Waveform(y))
    except Exception as exc:
        print(f"stub_codec: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
