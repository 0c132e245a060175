"""JSONL manifest contract: exact field names, optional-key omission,
relative path resolution and corrupt-line diagnostics."""
from __future__ import annotations

import json

import pytest
from numpy.testing import assert_allclose

from xane.errors import ConfigError
from xane.manifest import (ManifestEntry, entry_to_json, read_manifest,
                           write_manifest)
from xane.metrics import AcousticLabels, SegmentLabels


def _full_entry():
    labels = AcousticLabels(
        c50_db=12.5, c5_db=8.0, t60_ms=350.0, drr_db=4.0, rvol_m3=60.0,
        refc=0.8, snr_db=15.0, estoi=0.85, pesq=3.1, bitrate_kbps=24.0,
        noise_type="babble", codec_type="opus_speech", overlap=True,
        segments=[SegmentLabels(0, 0.9, snr_db=14.0),
                  SegmentLabels(1000, 0.4, snr_db=16.0)])
    return ManifestEntry(id="opus_speech_overlap_0001",
                         degraded="audio/a.wav", clean="clean/a.wav",
                         rir="rir/a.wav", group_codec="opus_speech",
                         group_overlap=True, labels=labels)


def _plain_entry():
    labels = AcousticLabels(
        c50_db=60.0, c5_db=60.0, t60_ms=0.0, drr_db=60.0, rvol_m3=30.0,
        refc=0.2, snr_db=0.0, estoi=1.0, pesq=None, bitrate_kbps=None,
        noise_type="white", codec_type="uncompressed", overlap=False,
        segments=[SegmentLabels(0, 0.7, snr_db=None)])
    return ManifestEntry(id="uncompressed_0000", degraded="audio/b.wav",
                         clean="clean/b.wav", rir="rir/b.wav",
                         group_codec="uncompressed", group_overlap=False,
                         labels=labels)


def test_serialized_field_names_are_the_contract():
    raw = json.loads(entry_to_json(_full_entry()))
    assert list(raw) == ["id", "degraded", "clean", "rir", "group_codec",
                         "group_overlap", "labels"]
    lab = raw["labels"]
    assert set(lab) == {"c50_db", "c5_db", "t60_ms", "drr_db", "rvol_m3",
                        "refc", "estoi", "pesq", "bitrate_kbps", "noise_type",
                        "codec_type", "overlap", "segments"}
    assert set(lab["segments"][0]) == {"start_ms", "vad", "snr_db"}


def test_optional_keys_are_omitted_not_null():
    lab = json.loads(entry_to_json(_plain_entry()))["labels"]
    assert "pesq" not in lab
    assert "bitrate_kbps" not in lab
    assert "snr_db" not in lab["segments"][0]
    assert "null" not in entry_to_json(_plain_entry())


def test_roundtrip_preserves_labels(tmp_path):
    path = tmp_path / "manifest.jsonl"
    write_manifest([_full_entry(), _plain_entry()], path)
    back = read_manifest(path)
    assert [e.id for e in back] == ["opus_speech_overlap_0001",
                                    "uncompressed_0000"]
    lab = back[0].labels
    src = _full_entry().labels
    for field in ("c50_db", "c5_db", "t60_ms", "drr_db", "rvol_m3", "refc",
                  "estoi", "pesq", "bitrate_kbps", "noise_type", "codec_type",
                  "overlap"):
        assert getattr(lab, field) == getattr(src, field)
    assert [s.vad_fraction for s in lab.segments] == [0.9, 0.4]
    assert [s.snr_db for s in lab.segments] == [14.0, 16.0]
    # utterance SNR is rebuilt as the mean of the per-segment values
    assert_allclose(lab.snr_db, 15.0)
    assert back[1].labels.pesq is None
    assert back[1].labels.bitrate_kbps is None
    assert back[1].labels.snr_db == 0.0


def test_paths_resolve_against_manifest_directory(tmp_path):
    sub = tmp_path / "data" / "run1"
    sub.mkdir(parents=True)
    path = sub / "manifest.jsonl"
    write_manifest([_plain_entry()], path)
    entry = read_manifest(path)[0]
    assert entry.degraded == str(sub / "audio" / "b.wav")
    assert entry.rir == str(sub / "rir" / "b.wav")


def test_blank_lines_are_skipped(tmp_path):
    path = tmp_path / "manifest.jsonl"
    path.write_text(entry_to_json(_plain_entry()) + "\n\n\n"
                    + entry_to_json(_full_entry()) + "\n")
    assert len(read_manifest(path)) == 2


def test_corrupt_line_reports_line_number(tmp_path):
    path = tmp_path / "manifest.jsonl"
    path.write_text(entry_to_json(_plain_entry()) + "\n{not json}\n")
    with pytest.raises(ConfigError, match="line 2"):
        read_manifest(path)


def test_missing_key_reports_line_number(tmp_path):
    raw = json.loads(entry_to_json(_plain_entry()))
    del raw["labels"]["t60_ms"]
    path = tmp_path / "manifest.jsonl"
    path.write_text(json.dumps(raw) + "\n")
    with pytest.raises(ConfigError, match="line 1"):
        read_manifest(path)
