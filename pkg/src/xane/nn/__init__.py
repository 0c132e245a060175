"""Minimal tensor/layer stack with exact reverse-mode gradients."""
from xane.nn.checkpoint import (Checkpoint, average_checkpoints,
                                load_checkpoint, save_checkpoint)
from xane.nn.gradcheck import check_module, max_relative_error
from xane.nn.layers import (GELU, GLU, AttentionPool, Conv1d, ConformerLayer,
                            DepthwiseConv1d, Dropout, FeedForward, LayerNorm,
                            Linear, MeanPool, Module, MultiHeadAttention,
                            Parameter, PositionalEncoding, SiLU,
                            TransformerEncoderLayer, softmax, xavier_uniform)
from xane.nn.losses import masked_mse, softmax_ce
from xane.nn.optim import Adam, ReduceLROnPlateau

__all__ = [
    "Adam", "AttentionPool", "Checkpoint", "Conv1d", "ConformerLayer",
    "DepthwiseConv1d", "Dropout", "FeedForward", "GELU", "GLU", "LayerNorm",
    "Linear", "MeanPool", "Module", "MultiHeadAttention", "Parameter",
    "PositionalEncoding", "ReduceLROnPlateau", "SiLU",
    "TransformerEncoderLayer", "average_checkpoints", "check_module",
    "load_checkpoint", "masked_mse", "max_relative_error", "save_checkpoint",
    "softmax", "softmax_ce", "xavier_uniform",
]
