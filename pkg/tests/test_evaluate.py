"""Clustering, scoring reports, RTF measurement and inference aggregation."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from xane import SAMPLE_RATE
from xane.audio import Waveform
from xane.errors import XaneError
from xane.evaluate import (ClusterResult, classification_report, cluster_f1,
                           kmeans, macro_f1, measure_rtf,
                           read_embeddings_csv, regression_report,
                           truth_from_labels, write_embeddings_csv)
from xane.infer import infer_utterance, majority_vote
from xane.metrics import AcousticLabels, SegmentLabels
from xane.model import ModelConfig, build_model


def _blobs(seed, k=3, per=20, d=8, spread=0.05, sep=5.0):
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((k, d)) * sep
    x = np.concatenate([c + spread * rng.standard_normal((per, d))
                        for c in centers])
    labels = np.repeat(np.arange(k), per)
    return x, labels


def test_kmeans_recovers_separated_blobs():
    x, labels = _blobs(0)
    result = kmeans(x, 3, seed=1)
    assert isinstance(result, ClusterResult)
    assert cluster_f1(result.assignments, labels) == 100.0
    # within-cluster variance only: ~ n * d * spread^2
    assert result.inertia < 2.0 * 60 * 8 * 0.05 ** 2


def test_kmeans_k_equals_n_gives_zero_inertia():
    x = np.random.default_rng(2).standard_normal((6, 4))
    result = kmeans(x, 6, seed=0)
    assert result.inertia == pytest.approx(0.0, abs=1e-20)
    assert sorted(result.assignments) == list(range(6))


def test_kmeans_handles_duplicate_points():
    x = np.repeat(np.array([[0.0, 0.0], [10.0, 10.0]]), 5, axis=0)
    result = kmeans(x, 2, seed=3)
    assert result.inertia == pytest.approx(0.0, abs=1e-20)
    assert len(np.unique(result.assignments[:5])) == 1
    assert result.assignments[0] != result.assignments[5]


def test_kmeans_is_deterministic_per_seed():
    x, _ = _blobs(4)
    a = kmeans(x, 3, seed=7)
    b = kmeans(x, 3, seed=7)
    assert_array_equal(a.assignments, b.assignments)
    assert a.inertia == b.inertia


def test_kmeans_input_validation():
    x = np.zeros((2, 3))
    with pytest.raises(XaneError):
        kmeans(x, 5, seed=0)   # fewer points than clusters
    with pytest.raises(XaneError):
        kmeans(np.zeros(5), 2, seed=0)  # not 2-d


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_kmeans_inertia_never_worse_than_single_restart(seed):
    x, _ = _blobs(seed, k=2, per=8, d=3, spread=0.5, sep=2.0)
    multi = kmeans(x, 2, seed=seed, restarts=5)
    single = kmeans(x, 2, seed=seed, restarts=1)
    assert multi.inertia <= single.inertia + 1e-9


def test_macro_f1_hand_cases():
    # perfect
    assert macro_f1([0, 1, 1], [0, 1, 1]) == 100.0
    # all predictions in one class of a balanced binary problem:
    # F1(0) = 2*2/(2*2+2) = 2/3, F1(1) = 0 -> macro 33.33%
    got = macro_f1([0, 0, 0, 0], [0, 0, 1, 1])
    assert_allclose(got, 100.0 / 3.0, rtol=1e-12)
    # inverted binary predictions score zero
    assert macro_f1([1, 0], [0, 1]) == 0.0


def test_macro_f1_scores_only_truth_classes():
    # a predicted-only class does not drag the macro average down
    assert macro_f1([0, 0, 2], [0, 0, 0]) == pytest.approx(80.0)


def test_macro_f1_random_binary_is_near_half():
    rng = np.random.default_rng(5)
    pred = rng.integers(0, 2, 4000)
    truth = rng.integers(0, 2, 4000)
    assert abs(macro_f1(pred, truth) - 50.0) < 5.0


def test_macro_f1_validation():
    with pytest.raises(XaneError):
        macro_f1([0], [0, 1])
    with pytest.raises(XaneError):
        macro_f1([], [])


def test_cluster_f1_is_invariant_to_cluster_ids():
    truth = np.array([0, 0, 0, 1, 1, 1])
    assert cluster_f1(np.array([1, 1, 1, 0, 0, 0]), truth) == 100.0
    assert cluster_f1(np.array([0, 0, 0, 1, 1, 1]), truth) == 100.0


def test_cluster_f1_majority_mapping_and_ties():
    truth = np.array([0, 0, 1, 1, 1, 0])
    # cluster 0 = {0,0,1}, majority 0; cluster 1 = {1,1,0}, majority 1
    got = cluster_f1(np.array([0, 0, 0, 1, 1, 1]), truth)
    assert_allclose(got, 200.0 / 3.0, rtol=1e-12)
    with pytest.raises(XaneError, match="single-class"):
        cluster_f1(np.array([0, 1]), np.array([3, 3]))


def test_truth_from_labels_collapses_segments():
    labels = AcousticLabels(
        c50_db=10.0, c5_db=5.0, t60_ms=300.0, drr_db=2.0, rvol_m3=50.0,
        refc=0.7, snr_db=12.0, estoi=0.8, pesq=None, bitrate_kbps=None,
        noise_type="white", codec_type="uncompressed", overlap=False,
        segments=[SegmentLabels(0, 0.5, snr_db=10.0),
                  SegmentLabels(1000, 0.9, snr_db=14.0)])
    truth = truth_from_labels(labels)
    assert truth["snr_db"] == 12.0
    assert truth["vad"] == 0.7
    assert truth["pesq"] is None
    assert truth["bitrate_kbps"] is None
    assert truth["c50_db"] == 10.0


def test_regression_report_hand_values():
    est = {"a": {"c50_db": 1.0, "t60_ms": 100.0},
           "b": {"c50_db": 3.0, "t60_ms": 300.0}}
    truth = {"a": {"c50_db": 2.0, "t60_ms": None},
             "b": {"c50_db": 5.0, "t60_ms": 250.0}}
    report = regression_report(est, truth)
    assert report["c50_db"] == pytest.approx(1.5)  # mean(|1-2|, |3-5|)
    assert report["t60_ms"] == pytest.approx(50.0)  # only b carries truth
    assert report["pesq"] is None                   # no truth anywhere
    with pytest.raises(XaneError):
        regression_report({"x": {}}, {"y": {}})


def test_classification_report_hand_values():
    est = {"a": {"noise_type": "white", "codec_type": "opus_music",
                 "overlap": True},
           "b": {"noise_type": "babble", "codec_type": "opus_music",
                 "overlap": False}}
    truth = {"a": {"noise_type": "white", "codec_type": "opus_speech",
                   "overlap": True},
             "b": {"noise_type": "babble", "codec_type": "opus_speech",
                   "overlap": False}}
    report = classification_report(est, truth)
    assert report["noise_type"] == 100.0
    assert report["codec_type"] == 0.0
    assert report["overlap"] == 100.0


def test_majority_vote_plurality_and_tiebreak():
    # two votes for class 1, one for class 0
    logits = np.array([[5.0, 6.0], [1.0, 3.0], [4.0, 0.0]])
    assert majority_vote(logits) == 1
    # 1-1 tie: class 0 wins on mean posterior
    tied = np.array([[8.0, 0.0], [0.0, 1.0]])
    assert majority_vote(tied) == 0


def _tiny_model():
    cfg = ModelConfig(model_dim=16, heads=2, ffn_dim=16, encoder_layers=1,
                      dropout=0.0)
    model, _ = build_model(cfg, 0)
    model.train(False)
    return model


def _stats():
    stats = np.tile(np.array([0.0, 1.0]), (11, 1))
    stats[1] = [200.0, 80.0]  # give t60 a nontrivial denormalization
    return stats


def test_infer_utterance_denormalizes_and_segments():
    model = _tiny_model()
    rng = np.random.default_rng(6)
    w = Waveform(0.1 * rng.standard_normal(int(2.5 * SAMPLE_RATE)))
    est = infer_utterance(model, w, _stats())
    assert len(est.segments) == 2  # the 0.5 s tail is dropped
    assert [s.start_ms for s in est.segments] == [0, 1000]
    assert est.embedding.shape == (128,)
    assert set(est.regression) == set(
        ("c50_db", "t60_ms", "drr_db", "c5_db", "rvol_m3", "refc", "pesq",
         "estoi", "bitrate_kbps", "snr_db", "vad"))
    seg_mean = np.mean([s.regression["t60_ms"] for s in est.segments])
    assert est.regression["t60_ms"] == pytest.approx(seg_mean)
    assert est.noise_type in ("ambient", "babble", "music", "other", "white")
    assert est.codec_type in ("uncompressed", "opus_music", "opus_speech")
    # utterance embedding is the mean of the segment embeddings
    assert_allclose(est.embedding,
                    np.mean([s.embedding for s in est.segments], axis=0),
                    rtol=1e-12)


def test_infer_utterance_rejects_short_or_mismatched():
    model = _tiny_model()
    with pytest.raises(XaneError, match="shorter than one"):
        infer_utterance(model, Waveform(np.zeros(SAMPLE_RATE // 2)), _stats())


def test_measure_rtf_positive_and_validates_duration():
    model = _tiny_model()
    rng = np.random.default_rng(7)
    waves = [Waveform(0.1 * rng.standard_normal(3 * SAMPLE_RATE))
             for _ in range(4)]  # 12 s total
    rtf = measure_rtf(model, waves, _stats(), runs=3)
    assert rtf > 0.0
    with pytest.raises(XaneError, match="10 s"):
        measure_rtf(model, waves[:2], _stats())


def test_embeddings_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(8)
    ids = ["u1", "u2", "u3"]
    emb = rng.standard_normal((3, 128))
    path = tmp_path / "emb.csv"
    write_embeddings_csv(path, ids, emb)
    back_ids, back = read_embeddings_csv(path)
    assert back_ids == ids
    assert_array_equal(back, emb)  # %.17g is lossless for float64
    with pytest.raises(XaneError):
        write_embeddings_csv(path, ids, emb[:2])
    (tmp_path / "empty.csv").write_text("")
    with pytest.raises(XaneError):
        read_embeddings_csv(tmp_path / "empty.csv")
