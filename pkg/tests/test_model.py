"""Network structure, parameter budget and end-to-end gradient tests.

The expected parameter counts are recomputed here from first principles
(layer shapes only, no model code) so a silent architecture change cannot
slip past the budget check.
"""
from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from xane import nn
from xane.errors import ConfigError, XaneError
from xane.features import FeatureMatrix
from xane.model import (CODEC_CLASSES, EMBEDDING_DIM, NOISE_CLASSES,
                        REGRESSION_TASKS, ModelConfig, build_model,
                        forward_segment)
from xane.train import loss_weights


def _lin(n_in, n_out):
    return n_in * n_out + n_out


def _expected_params(cfg: ModelConfig) -> int:
    """Independent parameter arithmetic from the published layer shapes."""
    d, ffn, e = cfg.model_dim, cfg.ffn_dim, cfg.embedding_dim
    k1, k2 = cfg.conv_kernels
    total = k1 * cfg.input_dim * d + d  # conv1
    total += k2 * d * d + d             # conv2
    mha = 4 * _lin(d, d)
    ff = _lin(d, ffn) + _lin(ffn, d)
    ln = 2 * d
    if cfg.encoder == "transformer":
        per_layer = mha + ff + 2 * ln
    else:
        conv = (ln + _lin(d, 2 * d)
                + (cfg.conformer_conv_kernel * d + d)  # depthwise
                + ln + _lin(d, d))
        per_layer = 2 * (ln + ff) + ln + mha + conv + ln
    total += cfg.encoder_layers * per_layer
    if cfg.pooling == "attention":
        total += d
    total += _lin(d, e)
    total += _lin(e, 11) + _lin(e, 5) + _lin(e, 3) + _lin(e, 2)
    return total


def test_task_head_vocabularies():
    assert REGRESSION_TASKS == ("c50_db", "t60_ms", "drr_db", "c5_db",
                                "rvol_m3", "refc", "pesq", "estoi",
                                "bitrate_kbps", "snr_db", "vad")
    assert len(NOISE_CLASSES) == 5
    assert len(CODEC_CLASSES) == 3
    assert EMBEDDING_DIM == 128


def test_melfb_default_parameter_budget():
    cfg = ModelConfig(frontend="melfb")
    _, n = build_model(cfg, 0)
    assert n == _expected_params(cfg) == 999_701
    assert abs(n - 970_000) / 970_000 <= 0.10


def test_imported_default_parameter_budget():
    cfg = ModelConfig(frontend="imported")
    _, n = build_model(cfg, 0)
    assert n == _expected_params(cfg) == 1_316_629
    assert abs(n - 1_400_000) / 1_400_000 <= 0.15


@pytest.mark.parametrize("cfg", [
    ModelConfig(encoder="conformer", model_dim=64, heads=4, ffn_dim=96,
                encoder_layers=3, conformer_conv_kernel=7),
    ModelConfig(pooling="attention", model_dim=32, heads=4, ffn_dim=48,
                encoder_layers=1),
    ModelConfig(frontend="imported", encoder="conformer", model_dim=64,
                heads=2, ffn_dim=64, encoder_layers=1),
], ids=["conformer", "attnpool", "imported_conformer"])
def test_param_arithmetic_matches_other_configs(cfg):
    _, n = build_model(cfg, 1)
    assert n == _expected_params(cfg)


def test_encoder_frames_after_conv_stack():
    assert ModelConfig(frontend="melfb").encoder_frames == 25
    assert ModelConfig(frontend="imported").encoder_frames == 25
    cfg = ModelConfig(conv_strides=(3, 2), model_dim=32, heads=4)
    assert cfg.encoder_frames == 17  # ceil(ceil(100/3)/2)


def test_forward_output_shapes():
    cfg = ModelConfig(model_dim=32, heads=4, ffn_dim=32, encoder_layers=1)
    model, _ = build_model(cfg, 0)
    model.train(False)
    out = model.forward(np.random.default_rng(0).standard_normal((3, 100, 80)))
    assert out["embedding"].shape == (3, 128)
    assert out["regression"].shape == (3, 11)
    assert out["noise_logits"].shape == (3, 5)
    assert out["codec_logits"].shape == (3, 3)
    assert out["overlap_logits"].shape == (3, 2)
    assert all(np.isfinite(v).all() for v in out.values())


def test_same_seed_gives_identical_state():
    cfg = ModelConfig(model_dim=32, heads=4, ffn_dim=32, encoder_layers=1)
    a, _ = build_model(cfg, 42)
    b, _ = build_model(cfg, 42)
    for name, tensor in a.state().items():
        assert_array_equal(tensor, b.state()[name])
    c, _ = build_model(cfg, 43)
    assert any(not np.array_equal(t, c.state()[n]) for n, t in a.state().items())


def test_zeroed_head_weights_leave_bias():
    cfg = ModelConfig(model_dim=32, heads=4, ffn_dim=32, encoder_layers=1,
                      dropout=0.0)
    model, _ = build_model(cfg, 0)
    model.train(False)
    model.reg_head.W.value[...] = 0.0
    model.reg_head.b.value[...] = np.arange(11, dtype=float)
    out = model.forward(np.random.default_rng(1).standard_normal((2, 100, 80)))
    assert_allclose(out["regression"], np.tile(np.arange(11.0), (2, 1)),
                    rtol=1e-12)


def test_forward_segment_shapes_and_validation():
    cfg = ModelConfig(model_dim=32, heads=4, ffn_dim=32, encoder_layers=1)
    model, _ = build_model(cfg, 0)
    model.train(False)
    frames = np.random.default_rng(2).standard_normal((100, 80))
    emb, outs = forward_segment(model, frames)
    assert emb.shape == (128,)
    assert outs.regression.shape == (11,)
    assert outs.noise_logits.shape == (5,)
    assert outs.codec_logits.shape == (3,)
    assert outs.overlap_logits.shape == (2,)
    fm = FeatureMatrix(frames, hop_ms=10.0, normalized=True)
    emb2, _ = forward_segment(model, fm)
    assert_array_equal(emb, emb2)
    with pytest.raises(XaneError):
        forward_segment(model, frames[:50])


def test_state_roundtrip_and_mismatch():
    cfg = ModelConfig(model_dim=32, heads=4, ffn_dim=32, encoder_layers=1)
    a, _ = build_model(cfg, 0)
    b, _ = build_model(cfg, 1)
    b.load_state(a.state())
    x = np.random.default_rng(3).standard_normal((1, 100, 80))
    a.train(False)
    b.train(False)
    assert_array_equal(a.forward(x)["embedding"], b.forward(x)["embedding"])
    bad = a.state()
    bad.pop(next(iter(bad)))
    with pytest.raises(XaneError):
        b.load_state(bad)


def test_model_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(frontend="wav2vec")
    with pytest.raises(ConfigError):
        ModelConfig(encoder="lstm")
    with pytest.raises(ConfigError):
        ModelConfig(pooling="max")
    with pytest.raises(ConfigError):
        ModelConfig(embedding_dim=64)
    with pytest.raises(ConfigError):
        ModelConfig(model_dim=30, heads=8)
    with pytest.raises(ConfigError):
        ModelConfig(encoder_layers=0)


def test_model_config_json_roundtrip():
    cfg = ModelConfig(encoder="conformer", model_dim=64, heads=4, ffn_dim=96,
                      dropout=0.2, pooling="attention")
    back = ModelConfig.from_json(cfg.to_json())
    assert back == cfg
    assert back.conv_kernels == cfg.conv_kernels


def test_loss_weight_schedule():
    for epoch in (0, 1):
        sched = loss_weights(epoch)
        assert (sched.lambda_c, sched.lambda_r) == (1.0, 0.0)
    for epoch in (2, 5, 60):
        sched = loss_weights(epoch)
        assert (sched.lambda_c, sched.lambda_r) == (0.3, 1.0)
    with pytest.raises(XaneError):
        loss_weights(-1)


def _composite_loss(model, x, tgt, msk, nt, ct, ot, want_grads=False):
    out = model.forward(x)
    l_r, d_r, _ = nn.masked_mse(out["regression"], tgt, msk)
    l_n, d_n = nn.softmax_ce(out["noise_logits"], nt)
    l_c, d_c = nn.softmax_ce(out["codec_logits"], ct)
    l_o, d_o = nn.softmax_ce(out["overlap_logits"], ot)
    if want_grads:
        model.backward(d_r, d_n, d_c, d_o)
    return l_r + l_n + l_c + l_o


@pytest.mark.parametrize("encoder", ["transformer", "conformer"])
def test_full_model_gradcheck(encoder):
    """End-to-end analytic gradients through every trainable tensor."""
    cfg = ModelConfig(model_dim=16, heads=2, ffn_dim=24, encoder_layers=1,
                      dropout=0.0, encoder=encoder, conformer_conv_kernel=5)
    model, _ = build_model(cfg, 0)
    model.train(False)
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 100, 80))
    tgt = rng.standard_normal((2, 11))
    msk = np.array([[1.0] * 11, [1.0] * 5 + [0.0] * 6])
    nt, ct, ot = np.array([0, 3]), np.array([1, 2]), np.array([0, 1])

    rel, where = nn.check_module(
        model,
        lambda m: _composite_loss(m, x, tgt, msk, nt, ct, ot),
        lambda m: _composite_loss(m, x, tgt, msk, nt, ct, ot, want_grads=True),
        eps=1e-5, max_elems_per_tensor=6,
        rng=np.random.default_rng(5))
    assert rel <= 1e-4, f"{encoder}: {rel:.2e} at {where}"
