"""Exporter tests, all on the deterministic stub runner."""
import hashlib
import json
import os
import struct
import subprocess
import sys

import numpy as np
import pytest
from scipy.io import wavfile

from wavlm_export import ExportJob, export_features
from wavlm_export.xfea import read_xfea_header, write_xfea

SR = 16000


def _tone(dur_s, f0=220.0, seed=0):
    t = np.arange(int(round(dur_s * SR))) / SR
    rng = np.random.default_rng(seed)
    x = 0.4 * np.sin(2 * np.pi * f0 * t) + 0.05 * rng.standard_normal(len(t))
    return (x * 32767).astype(np.int16)


def _write_manifest(path, pairs):
    with open(path, "w", encoding="utf-8") as fh:
        for utt_id, wav in pairs:
            fh.write(json.dumps({"id": utt_id, "degraded": wav}) + "\n")


@pytest.fixture
def dataset(tmp_path):
    pairs = []
    for i, dur in enumerate((1.0, 1.37, 2.5)):
        name = f"utt_{i}.wav"
        wavfile.write(tmp_path / name, SR, _tone(dur, f0=180 + 60 * i, seed=i))
        pairs.append((f"utt_{i}", name))  # relative to the manifest dir
    manifest = tmp_path / "manifest.jsonl"
    _write_manifest(manifest, pairs)
    return manifest


def test_export_headers_and_index(dataset, tmp_path):
    out = tmp_path / "feats"
    result = export_features(ExportJob(str(dataset), str(out)))
    assert (result.exported, result.skipped) == (3, 0)

    lines = (out / "index.csv").read_text().splitlines()
    assert lines[0] == "id,path"
    assert len(lines) == 4

    for utt_id, dur in zip(("utt_0", "utt_1", "utt_2"), (1.0, 1.37, 2.5)):
        t, d, hop_ms, normalized = read_xfea_header(out / f"{utt_id}.xfea")
        assert d == 768 and hop_ms == 20.0 and normalized == 0
        assert abs(t - round(dur * 50)) <= 1


def test_one_second_is_exactly_50_frames(dataset, tmp_path):
    out = tmp_path / "feats"
    export_features(ExportJob(str(dataset), str(out)))
    t, _, _, _ = read_xfea_header(out / "utt_0.xfea")
    assert t == 50


def test_golden_header_bytes(tmp_path):
    path = tmp_path / "x.xfea"
    write_xfea(path, np.zeros((2, 3), dtype=np.float32))
    raw = path.read_bytes()
    assert struct.unpack("<4sIIIfB", raw[:21]) == (b"XFEA", 1, 2, 3, 20.0, 0)
    assert len(raw) == 21 + 2 * 3 * 4


def test_payload_is_float32_row_major(tmp_path):
    frames = np.arange(12, dtype=np.float32).reshape(3, 4)
    path = tmp_path / "x.xfea"
    write_xfea(path, frames)
    payload = np.frombuffer(path.read_bytes()[21:], dtype="<f4").reshape(3, 4)
    assert np.array_equal(payload, frames)


def test_export_is_deterministic(dataset, tmp_path):
    digests = []
    for run in ("a", "b"):
        out = tmp_path / run
        export_features(ExportJob(str(dataset), str(out)))
        h = hashlib.sha256()
        for name in sorted(os.listdir(out)):
            h.update((out / name).read_bytes())
        digests.append(h.hexdigest())
    assert digests[0] == digests[1]


def test_bad_audio_is_skipped_with_count(dataset, tmp_path, caplog):
    (tmp_path / "utt_1.wav").write_text("not audio")
    result = export_features(ExportJob(str(dataset), str(tmp_path / "f")))
    assert (result.exported, result.skipped) == (2, 1)
    assert "utt_1" in caplog.text
    index = (tmp_path / "f" / "index.csv").read_text()
    assert "utt_1" not in index and "utt_2" in index


def test_wrong_rate_is_skipped(tmp_path):
    wavfile.write(tmp_path / "a.wav", 8000, _tone(1.0))
    manifest = tmp_path / "m.jsonl"
    _write_manifest(manifest, [("a", "a.wav")])
    result = export_features(ExportJob(str(manifest), str(tmp_path / "f")))
    assert (result.exported, result.skipped) == (0, 1)


def test_empty_manifest_gives_empty_index(tmp_path):
    manifest = tmp_path / "m.jsonl"
    manifest.write_text("\n")
    result = export_features(ExportJob(str(manifest), str(tmp_path / "f")))
    assert (result.exported, result.skipped) == (0, 0)
    assert (tmp_path / "f" / "index.csv").read_text().splitlines() == ["id,path"]


def test_corrupt_manifest_line_is_an_error(tmp_path):
    manifest = tmp_path / "m.jsonl"
    manifest.write_text('{"id": "a", "degraded": "a.wav"}\n{oops\n')
    with pytest.raises(ValueError, match="line 2"):
        export_features(ExportJob(str(manifest), str(tmp_path / "f")))


def test_cli_end_to_end(dataset, tmp_path):
    out = tmp_path / "feats"
    proc = subprocess.run(
        [sys.executable, "-m", "wavlm_export", str(dataset),
         "--out-dir", str(out), "--model", "stub"],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.splitlines()[0] == "exported 3 features, skipped 0"
    assert (out / "index.csv").exists()


def test_cli_missing_manifest_fails(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "wavlm_export", str(tmp_path / "none.jsonl"),
         "--out-dir", str(tmp_path / "f"), "--model", "stub"],
        capture_output=True, text=True)
    assert proc.returncode == 1
