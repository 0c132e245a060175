"""Layer stack with explicit reverse-mode gradients.

Everything is float64 numpy end to end; checkpoints quantize to float32
at the file boundary. Each layer caches what its backward pass needs, so
a module instance is not safe for concurrent forward calls, but distinct
instances sharing no state are.
"""
from __future__ import annotations

import numpy as np
from scipy.special import erf

from xane.errors import XaneError

LN_EPS = 1e-5


class Parameter:
    """A trainable tensor with its gradient accumulator."""

    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    @property
    def size(self) -> int:
        return self.value.size


class Module:
    """Base class with parameter registration by attribute assignment."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", False)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Parameter]]:
        out = [(prefix + n, p) for n, p in self._params.items()]
        for cn, child in self._children.items():
            out.extend(child.named_parameters(prefix + cn + "."))
        return out

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad[...] = 0.0

    def train(self, mode: bool = True):
        object.__setattr__(self, "training", mode)
        for child in self._children.values():
            child.train(mode)
        return self


def xavier_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        super().__init__()
        self.d_in, self.d_out = d_in, d_out
        self.W = Parameter(xavier_uniform(rng, (d_in, d_out), d_in, d_out))
        self.b = Parameter(np.zeros(d_out))

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.d_in:
            raise XaneError(f"linear expects last dim {self.d_in}, got {x.shape[-1]}")
        self._x = x
        return x @ self.W.value + self.b.value

    def backward(self, g: np.ndarray) -> np.ndarray:
        x2 = self._x.reshape(-1, self.d_in)
        g2 = g.reshape(-1, self.d_out)
        self.W.grad += x2.T @ g2
        self.b.grad += g2.sum(axis=0)
        return g @ self.W.value.T


def _same_pad(t: int, k: int, s: int) -> tuple[int, int, int]:
    """(t_out, pad_left, pad_right) for "same"-style padding: t_out = ceil(t/s)."""
    t_out = -(-t // s)
    total = max((t_out - 1) * s + k - t, 0)
    return t_out, total // 2, total - total // 2


class Conv1d(Module):
    """Time convolution on (B, T, C_in) with stride subsampling, T_out = ceil(T/s)."""

    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int, rng: np.random.Generator):
        super().__init__()
        if kernel < 1 or stride < 1:
            raise XaneError("conv kernel and stride must be >= 1")
        self.c_in, self.c_out, self.k, self.s = c_in, c_out, kernel, stride
        self.W = Parameter(xavier_uniform(rng, (kernel, c_in, c_out), kernel * c_in, kernel * c_out))
        self.b = Parameter(np.zeros(c_out))

    def forward(self, x: np.ndarray) -> np.ndarray:
        b, t, c = x.shape
        if c != self.c_in:
            raise XaneError(f"conv expects {self.c_in} channels, got {c}")
        if t < self.k:
            raise XaneError(f"conv input has {t} frames, kernel is {self.k}")
        t_out, pl, pr = _same_pad(t, self.k, self.s)
        xp = np.pad(x, ((0, 0), (pl, pr), (0, 0)))
        idx = self.s * np.arange(t_out)[:, None] + np.arange(self.k)[None, :]
        win = xp[:, idx, :]  # (B, T_out, k, C_in)
        self._win, self._t, self._pl, self._tp = win, t, pl, xp.shape[1]
        y = win.reshape(b, t_out, -1) @ self.W.value.reshape(-1, self.c_out)
        return y + self.b.value

    def backward(self, g: np.ndarray) -> np.ndarray:
        b, t_out, _ = g.shape
        win2 = self._win.reshape(b * t_out, -1)
        g2 = g.reshape(b * t_out, self.c_out)
        self.W.grad += (win2.T @ g2).reshape(self.W.value.shape)
        self.b.grad += g2.sum(axis=0)
        dwin = (g2 @ self.W.value.reshape(-1, self.c_out).T).reshape(b, t_out, self.k, self.c_in)
        dxp = np.zeros((b, self._tp, self.c_in))
        base = self.s * np.arange(t_out)
        for j in range(self.k):
            dxp[:, base + j, :] += dwin[:, :, j, :]
        return dxp[:, self._pl:self._pl + self._t, :]


class DepthwiseConv1d(Module):
    """Per-channel time convolution, stride 1, same length out."""

    def __init__(self, channels: int, kernel: int, rng: np.random.Generator):
        super().__init__()
        self.c, self.k = channels, kernel
        self.W = Parameter(xavier_uniform(rng, (kernel, channels), kernel, kernel))
        self.b = Parameter(np.zeros(channels))

    def forward(self, x: np.ndarray) -> np.ndarray:
        b, t, c = x.shape
        _, pl, pr = _same_pad(t, self.k, 1)
        xp = np.pad(x, ((0, 0), (pl, pr), (0, 0)))
        idx = np.arange(t)[:, None] + np.arange(self.k)[None, :]
        win = xp[:, idx, :]  # (B, T, k, C)
        self._win, self._pl, self._t, self._tp = win, pl, t, xp.shape[1]
        return np.einsum("btkc,kc->btc", win, self.W.value) + self.b.value

    def backward(self, g: np.ndarray) -> np.ndarray:
        self.W.grad += np.einsum("btkc,btc->kc", self._win, g)
        self.b.grad += g.sum(axis=(0, 1))
        dxp = np.zeros((g.shape[0], self._tp, self.c))
        base = np.arange(self._t)
        for j in range(self.k):
            dxp[:, base + j, :] += g * self.W.value[j]
        return dxp[:, self._pl:self._pl + self._t, :]


class LayerNorm(Module):
    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.gain = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))

    def forward(self, x: np.ndarray) -> np.ndarray:
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        self._istd = 1.0 / np.sqrt(var + LN_EPS)
        self._xhat = (x - mu) * self._istd
        return self.gain.value * self._xhat + self.bias.value

    def backward(self, g: np.ndarray) -> np.ndarray:
        xhat, istd, n = self._xhat, self._istd, self.dim
        self.gain.grad += (g * xhat).reshape(-1, n).sum(axis=0)
        self.bias.grad += g.reshape(-1, n).sum(axis=0)
        dxhat = g * self.gain.value
        return (istd / n) * (n * dxhat
                             - dxhat.sum(axis=-1, keepdims=True)
                             - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))


def _phi(x):
    return 0.5 * (1.0 + erf(x / np.sqrt(2.0)))


class GELU(Module):
    """Exact Gaussian-CDF form x * Phi(x)."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x * _phi(x)

    def backward(self, g: np.ndarray) -> np.ndarray:
        x = self._x
        pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
        return g * (_phi(x) + x * pdf)


class SiLU(Module):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self._s = 1.0 / (1.0 + np.exp(-x))
        self._x = x
        return x * self._s

    def backward(self, g: np.ndarray) -> np.ndarray:
        s, x = self._s, self._x
        return g * s * (1.0 + x * (1.0 - s))


class GLU(Module):
    """Gated linear unit over the last axis: a * sigmoid(b) for x = [a | b]."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        d = x.shape[-1]
        if d % 2:
            raise XaneError("GLU input dim must be even")
        self._a, b = x[..., :d // 2], x[..., d // 2:]
        self._sb = 1.0 / (1.0 + np.exp(-b))
        return self._a * self._sb

    def backward(self, g: np.ndarray) -> np.ndarray:
        da = g * self._sb
        db = g * self._a * self._sb * (1.0 - self._sb)
        return np.concatenate([da, db], axis=-1)


class Dropout(Module):
    """Inverted dropout; draws from its own generator only in training mode."""

    def __init__(self, p: float, rng: np.random.Generator):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise XaneError(f"dropout p must be in [0, 1), got {p}")
        self.p = p
        self.rng = rng

    def forward(self, x: np.ndarray) -> np.ndarray:
        if not self.training or self.p == 0.0:
            self._mask = None
            return x
        self._mask = (self.rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * self._mask

    def backward(self, g: np.ndarray) -> np.ndarray:
        return g if self._mask is None else g * self._mask


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def _softmax_backward(y: np.ndarray, g: np.ndarray, axis: int = -1) -> np.ndarray:
    return y * (g - (g * y).sum(axis=axis, keepdims=True))


class MultiHeadAttention(Module):
    """Scaled dot-product self-attention on (B, T, D)."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if dim % heads:
            raise XaneError(f"model dim {dim} not divisible by {heads} heads")
        self.dim, self.h, self.dh = dim, heads, dim // heads
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)

    def _split(self, x):
        b, t, _ = x.shape
        return x.reshape(b, t, self.h, self.dh).transpose(0, 2, 1, 3)

    def forward(self, x: np.ndarray) -> np.ndarray:
        b, t, _ = x.shape
        q = self._split(self.wq.forward(x))
        k = self._split(self.wk.forward(x))
        v = self._split(self.wv.forward(x))
        scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(self.dh)
        attn = softmax(scores, axis=-1)
        ctx = attn @ v  # (B, h, T, dh)
        self._q, self._k, self._v, self._attn = q, k, v, attn
        out = ctx.transpose(0, 2, 1, 3).reshape(b, t, self.dim)
        return self.wo.forward(out)

    def backward(self, g: np.ndarray) -> np.ndarray:
        b, t, _ = g.shape
        dctx = self.wo.backward(g).reshape(b, t, self.h, self.dh).transpose(0, 2, 1, 3)
        dattn = dctx @ self._v.transpose(0, 1, 3, 2)
        dv = self._attn.transpose(0, 1, 3, 2) @ dctx
        dscores = _softmax_backward(self._attn, dattn) / np.sqrt(self.dh)
        dq = dscores @ self._k
        dk = dscores.transpose(0, 1, 3, 2) @ self._q

        def merge(h):
            return h.transpose(0, 2, 1, 3).reshape(b, t, self.dim)

        return (self.wq.backward(merge(dq))
                + self.wk.backward(merge(dk))
                + self.wv.backward(merge(dv)))


class PositionalEncoding(Module):
    """Additive sinusoidal position code; no trainable parameters."""

    def __init__(self, dim: int, max_len: int = 512):
        super().__init__()
        self.dim = dim
        self._table = self._build(max_len)

    def _build(self, n: int) -> np.ndarray:
        pos = np.arange(n)[:, None]
        omega = np.power(10000.0, -np.arange(0, self.dim, 2) / self.dim)[None, :]
        pe = np.zeros((n, self.dim))
        pe[:, 0::2] = np.sin(pos * omega)
        pe[:, 1::2] = np.cos(pos * omega)
        return pe

    def forward(self, x: np.ndarray) -> np.ndarray:
        t = x.shape[-2]
        if t > self._table.shape[0]:
            self._table = self._build(2 * t)
        return x + self._table[:t]

    def backward(self, g: np.ndarray) -> np.ndarray:
        return g


class FeedForward(Module):
    """Position-wise Linear -> activation -> Linear."""

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator, activation: str = "gelu"):
        super().__init__()
        self.lin1 = Linear(dim, hidden, rng)
        self.act = GELU() if activation == "gelu" else SiLU()
        self.lin2 = Linear(hidden, dim, rng)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.lin2.forward(self.act.forward(self.lin1.forward(x)))

    def backward(self, g: np.ndarray) -> np.ndarray:
        return self.lin1.backward(self.act.backward(self.lin2.backward(g)))


class TransformerEncoderLayer(Module):
    """Post-LN encoder layer: LN(x + drop(MHA(x))) then LN(x + drop(FFN(x)))."""

    def __init__(self, dim: int, heads: int, ffn_dim: int, p_drop: float,
                 rng: np.random.Generator, drop_rng: np.random.Generator):
        super().__init__()
        self.mha = MultiHeadAttention(dim, heads, rng)
        self.drop1 = Dropout(p_drop, drop_rng)
        self.ln1 = LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_dim, rng, activation="gelu")
        self.drop2 = Dropout(p_drop, drop_rng)
        self.ln2 = LayerNorm(dim)

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = self.ln1.forward(x + self.drop1.forward(self.mha.forward(x)))
        return self.ln2.forward(h + self.drop2.forward(self.ffn.forward(h)))

    def backward(self, g: np.ndarray) -> np.ndarray:
        dh = self.ln2.backward(g)
        dh = dh + self.ffn.backward(self.drop2.backward(dh))
        dx = self.ln1.backward(dh)
        return dx + self.mha.backward(self.drop1.backward(dx))


class _ConformerConv(Module):
    """LN -> pointwise (d -> 2d) -> GLU -> depthwise -> LN -> SiLU -> pointwise."""

    def __init__(self, dim: int, kernel: int, p_drop: float,
                 rng: np.random.Generator, drop_rng: np.random.Generator):
        super().__init__()
        self.ln = LayerNorm(dim)
        self.pw1 = Linear(dim, 2 * dim, rng)
        self.glu = GLU()
        self.dw = DepthwiseConv1d(dim, kernel, rng)
        self.norm = LayerNorm(dim)  # LayerNorm standing in for BatchNorm
        self.act = SiLU()
        self.pw2 = Linear(dim, dim, rng)
        self.drop = Dropout(p_drop, drop_rng)

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = self.glu.forward(self.pw1.forward(self.ln.forward(x)))
        h = self.act.forward(self.norm.forward(self.dw.forward(h)))
        return self.drop.forward(self.pw2.forward(h))

    def backward(self, g: np.ndarray) -> np.ndarray:
        dh = self.pw2.backward(self.drop.backward(g))
        dh = self.dw.backward(self.norm.backward(self.act.backward(dh)))
        return self.ln.backward(self.pw1.backward(self.glu.backward(dh)))


class _PreNormFFN(Module):
    def __init__(self, dim: int, ffn_dim: int, p_drop: float,
                 rng: np.random.Generator, drop_rng: np.random.Generator):
        super().__init__()
        self.ln = LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_dim, rng, activation="silu")
        self.drop = Dropout(p_drop, drop_rng)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.drop.forward(self.ffn.forward(self.ln.forward(x)))

    def backward(self, g: np.ndarray) -> np.ndarray:
        return self.ln.backward(self.ffn.backward(self.drop.backward(g)))


class ConformerLayer(Module):
    """FFN/MHSA/conv/FFN sandwich with half-step FFN residuals and a final LN."""

    def __init__(self, dim: int, heads: int, ffn_dim: int, p_drop: float,
                 rng: np.random.Generator, drop_rng: np.random.Generator,
                 conv_kernel: int = 15):
        super().__init__()
        self.ff1 = _PreNormFFN(dim, ffn_dim, p_drop, rng, drop_rng)
        self.attn_ln = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.attn_drop = Dropout(p_drop, drop_rng)
        self.conv = _ConformerConv(dim, conv_kernel, p_drop, rng, drop_rng)
        self.ff2 = _PreNormFFN(dim, ffn_dim, p_drop, rng, drop_rng)
        self.ln_out = LayerNorm(dim)

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = x + 0.5 * self.ff1.forward(x)
        x = x + self.attn_drop.forward(self.attn.forward(self.attn_ln.forward(x)))
        x = x + self.conv.forward(x)
        x = x + 0.5 * self.ff2.forward(x)
        return self.ln_out.forward(x)

    def backward(self, g: np.ndarray) -> np.ndarray:
        dx = self.ln_out.backward(g)
        dx = dx + self.ff2.backward(0.5 * dx)
        dx = dx + self.conv.backward(dx)
        dx = dx + self.attn_ln.backward(self.attn.backward(self.attn_drop.backward(dx)))
        return dx + self.ff1.backward(0.5 * dx)


class MeanPool(Module):
    """Temporal mean over axis 1: (B, T, D) -> (B, D)."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._t = x.shape[1]
        return x.mean(axis=1)

    def backward(self, g: np.ndarray) -> np.ndarray:
        return np.repeat(g[:, None, :], self._t, axis=1) / self._t


class AttentionPool(Module):
    """Learned-query softmax pooling over time."""

    def __init__(self, dim: int, rng: np.random.Generator):
        super().__init__()
        self.w = Parameter(xavier_uniform(rng, (dim,), dim, 1))

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        self._a = softmax(x @ self.w.value, axis=-1)  # (B, T)
        return np.einsum("bt,btd->bd", self._a, x)

    def backward(self, g: np.ndarray) -> np.ndarray:
        x, a = self._x, self._a
        dx = a[:, :, None] * g[:, None, :]
        da = np.einsum("bd,btd->bt", g, x)
        ds = _softmax_backward(a, da)
        self.w.grad += np.einsum("bt,btd->d", ds, x)
        return dx + ds[:, :, None] * self.w.value
