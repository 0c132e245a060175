"""The XANE network: conv downsampling, a two-layer encoder, temporal
pooling, the 128-d embedding layer and the multi-task output heads."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from xane.errors import ConfigError, XaneError
from xane.features import FeatureMatrix
from xane.metrics import CODEC_TYPES, NOISE_TYPES
from xane.nn.layers import (GELU, AttentionPool, Conv1d, ConformerLayer,
                            Linear, MeanPool, Module, PositionalEncoding,
                            TransformerEncoderLayer)

# Canonical order of the regression heads; checkpoints store target
# normalization stats in exactly this order.
REGRESSION_TASKS = ("c50_db", "t60_ms", "drr_db", "c5_db", "rvol_m3", "refc",
                    "pesq", "estoi", "bitrate_kbps", "snr_db", "vad")
NOISE_CLASSES = NOISE_TYPES
CODEC_CLASSES = CODEC_TYPES

EMBEDDING_DIM = 128

_FRONTENDS = {
    # frontend: (input_dim, input_frames, model_dim, kernels, strides)
    "melfb": (80, 100, 256, (2, 2), (2, 2)),
    "imported": (768, 50, 128, (9, 9), (2, 1)),
}


@dataclass
class ModelConfig:
    frontend: str = "melfb"
    encoder: str = "transformer"
    encoder_layers: int = 2
    model_dim: int | None = None
    heads: int = 8
    ffn_dim: int = 256
    embedding_dim: int = 128
    conv_kernels: tuple[int, int] | None = None
    conv_strides: tuple[int, int] | None = None
    dropout: float = 0.1
    positional_encoding: bool = True
    pooling: str = "mean"
    conformer_conv_kernel: int = 15

    def __post_init__(self):
        if self.frontend not in _FRONTENDS:
            raise ConfigError(f"unknown frontend {self.frontend!r}")
        if self.encoder not in ("transformer", "conformer"):
            raise ConfigError(f"unknown encoder {self.encoder!r}")
        if self.pooling not in ("mean", "attention"):
            raise ConfigError(f"unknown pooling {self.pooling!r}")
        defaults = _FRONTENDS[self.frontend]
        if self.model_dim is None:
            self.model_dim = defaults[2]
        if self.conv_kernels is None:
            self.conv_kernels = defaults[3]
        if self.conv_strides is None:
            self.conv_strides = defaults[4]
        self.conv_kernels = tuple(int(k) for k in self.conv_kernels)
        self.conv_strides = tuple(int(s) for s in self.conv_strides)
        if self.embedding_dim != EMBEDDING_DIM:
            raise ConfigError(f"embedding_dim must be {EMBEDDING_DIM}")
        if self.model_dim % self.heads:
            raise ConfigError(f"model_dim {self.model_dim} not divisible "
                              f"by {self.heads} heads")
        if self.encoder_layers < 1:
            raise ConfigError("encoder_layers must be >= 1")

    @property
    def input_dim(self) -> int:
        return _FRONTENDS[self.frontend][0]

    @property
    def input_frames(self) -> int:
        return _FRONTENDS[self.frontend][1]

    @property
    def encoder_frames(self) -> int:
        t = self.input_frames
        for s in self.conv_strides:
            t = -(-t // s)
        return t

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        raw = json.loads(text)
        for key in ("conv_kernels", "conv_strides"):
            if raw.get(key) is not None:
                raw[key] = tuple(raw[key])
        return cls(**raw)


@dataclass
class TaskOutputs:
    regression: np.ndarray  # (11,) in normalized target space
    noise_logits: np.ndarray  # (5,)
    codec_logits: np.ndarray  # (3,)
    overlap_logits: np.ndarray  # (2,)


class XaneModel(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator,
                 drop_rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        d = cfg.model_dim
        k1, k2 = cfg.conv_kernels
        s1, s2 = cfg.conv_strides
        self.conv1 = Conv1d(cfg.input_dim, d, k1, s1, rng)
        self.act1 = GELU()
        self.conv2 = Conv1d(d, d, k2, s2, rng)
        self.act2 = GELU()
        self.pos = PositionalEncoding(d) if cfg.positional_encoding else None
        for i in range(cfg.encoder_layers):
            if cfg.encoder == "transformer":
                layer = TransformerEncoderLayer(d, cfg.heads, cfg.ffn_dim,
                                                cfg.dropout, rng, drop_rng)
            else:
                layer = ConformerLayer(d, cfg.heads, cfg.ffn_dim, cfg.dropout,
                                       rng, drop_rng,
                                       conv_kernel=cfg.conformer_conv_kernel)
            setattr(self, f"enc{i}", layer)
        self.pool = MeanPool() if cfg.pooling == "mean" else AttentionPool(d, rng)
        self.embed = Linear(d, cfg.embedding_dim, rng)
        self.embed_act = GELU()
        self.reg_head = Linear(cfg.embedding_dim, len(REGRESSION_TASKS), rng)
        self.noise_head = Linear(cfg.embedding_dim, len(NOISE_CLASSES), rng)
        self.codec_head = Linear(cfg.embedding_dim, len(CODEC_CLASSES), rng)
        self.overlap_head = Linear(cfg.embedding_dim, 2, rng)

    def _encoder_layers(self):
        return [getattr(self, f"enc{i}") for i in range(self.cfg.encoder_layers)]

    def forward(self, x: np.ndarray) -> dict[str, np.ndarray]:
        """x: (B, T, D_in) -> embeddings and head outputs, batched."""
        h = self.act1.forward(self.conv1.forward(x))
        h = self.act2.forward(self.conv2.forward(h))
        if self.pos is not None:
            h = self.pos.forward(h)
        for layer in self._encoder_layers():
            h = layer.forward(h)
        pooled = self.pool.forward(h)
        emb = self.embed_act.forward(self.embed.forward(pooled))
        return {
            "embedding": emb,
            "regression": self.reg_head.forward(emb),
            "noise_logits": self.noise_head.forward(emb),
            "codec_logits": self.codec_head.forward(emb),
            "overlap_logits": self.overlap_head.forward(emb),
        }

    def backward(self, d_regression: np.ndarray, d_noise: np.ndarray,
                 d_codec: np.ndarray, d_overlap: np.ndarray) -> np.ndarray:
        demb = (self.reg_head.backward(d_regression)
                + self.noise_head.backward(d_noise)
                + self.codec_head.backward(d_codec)
                + self.overlap_head.backward(d_overlap))
        dpooled = self.embed.backward(self.embed_act.backward(demb))
        dh = self.pool.backward(dpooled)
        for layer in reversed(self._encoder_layers()):
            dh = layer.backward(dh)
        if self.pos is not None:
            dh = self.pos.backward(dh)
        dh = self.conv2.backward(self.act2.backward(dh))
        return self.conv1.backward(self.act1.backward(dh))

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.named_parameters()}

    def load_state(self, tensors: dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        if set(own) != set(tensors):
            missing = sorted(set(own) ^ set(tensors))
            raise XaneError(f"checkpoint does not match model: {missing[:4]}")
        for name, p in own.items():
            t = np.asarray(tensors[name], dtype=np.float64)
            if t.shape != p.value.shape:
                raise XaneError(f"tensor {name} has shape {t.shape}, "
                                f"expected {p.value.shape}")
            p.value[...] = t


def build_model(cfg: ModelConfig, seed: int) -> tuple[XaneModel, int]:
    """Deterministic Xavier-uniform initialization; returns the exact
    trainable-parameter count alongside the model."""
    init_ss, drop_ss = np.random.SeedSequence(seed).spawn(2)
    model = XaneModel(cfg, np.random.default_rng(init_ss),
                      np.random.default_rng(drop_ss))
    return model, model.n_parameters()


def forward_segment(model: XaneModel, features) -> tuple[np.ndarray, TaskOutputs]:
    """One 1 s feature slice -> (128-d embedding, task outputs)."""
    frames = features.frames if isinstance(features, FeatureMatrix) else np.asarray(features)
    cfg = model.cfg
    if frames.shape != (cfg.input_frames, cfg.input_dim):
        raise XaneError(f"expected a {cfg.input_frames}x{cfg.input_dim} "
                        f"segment, got {frames.shape}")
    out = model.forward(frames[None])
    return out["embedding"][0], TaskOutputs(
        regression=out["regression"][0],
        noise_logits=out["noise_logits"][0],
        codec_logits=out["codec_logits"][0],
        overlap_logits=out["overlap_logits"][0],
    )
