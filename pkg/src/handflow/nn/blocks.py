"""Network building blocks on top of the autodiff tensor.

Parameters are created with truncated-normal weights (std 0.02, redrawn
beyond 2 sigma) and zero biases. Blocks take an explicit rng and dtype so
tests can build double-precision instances for gradient checking while the
training path stays in float32.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


def truncated_normal(rng, shape, std=0.02, dtype=np.float32):
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while np.any(bad):
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return (out * std).astype(dtype)


class Module:
    """Tiny parameter container with recursive traversal."""

    def named_parameters(self, prefix=""):
        out = {}
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                out[path] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(prefix=f"{path}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(prefix=f"{path}.{i}."))
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out[f"{path}.{i}"] = item
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def load_state(self, state):
        """Copy a {name: ndarray} mapping into this module's parameters."""
        params = self.named_parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.data.shape}")
            p.data = arr.copy()

    def state(self):
        return {name: p.data.copy() for name, p in self.named_parameters().items()}


class Linear(Module):
    def __init__(self, d_in, d_out, rng, dtype=np.float32):
        self.weight = Tensor(truncated_normal(rng, (d_in, d_out), dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return T.matmul(x, self.weight) + self.bias


class LayerNorm(Module):
    def __init__(self, dim, dtype=np.float32, eps=1e-5):
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.eps = eps

    def __call__(self, x):
        return T.layer_norm(x, self.gamma, self.beta, eps=self.eps)


class MLP(Module):
    """Two-layer feed-forward block (ReLU by default, GELU available)."""

    def __init__(self, dim, rng, hidden_mult=4, dtype=np.float32, activation="relu"):
        self.fc1 = Linear(dim, dim * hidden_mult, rng, dtype)
        self.fc2 = Linear(dim * hidden_mult, dim, rng, dtype)
        self._act = T.relu if activation == "relu" else T.gelu

    def __call__(self, x):
        return self.fc2(self._act(self.fc1(x)))


class MultiHeadAttention(Module):
    """Scaled dot-product attention; self-attention when kv is the query input."""

    def __init__(self, dim, heads, rng, dtype=np.float32):
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = Linear(dim, dim, rng, dtype)
        self.wk = Linear(dim, dim, rng, dtype)
        self.wv = Linear(dim, dim, rng, dtype)
        self.wo = Linear(dim, dim, rng, dtype)

    def _split(self, x, b, s):
        # (B, S, D) -> (B, h, S, dh)
        return T.transpose(T.reshape(x, (b, s, self.heads, self.head_dim)), (0, 2, 1, 3))

    def __call__(self, x, kv=None):
        kv = x if kv is None else kv
        b, sq = x.shape[0], x.shape[1]
        sk = kv.shape[1]
        q = self._split(self.wq(x), b, sq)
        k = self._split(self.wk(kv), b, sk)
        v = self._split(self.wv(kv), b, sk)
        scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(self.head_dim))
        attn = T.softmax(scores, axis=-1)
        ctx = T.matmul(attn, v)  # (B, h, Sq, dh)
        merged = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, sq, self.heads * self.head_dim))
        return self.wo(merged)


class TransformerLayer(Module):
    """Pre-norm transformer layer; cross-attention included when with_cross."""

    def __init__(self, dim, heads, rng, with_cross=False, dtype=np.float32):
        self.norm1 = LayerNorm(dim, dtype)
        self.attn = MultiHeadAttention(dim, heads, rng, dtype)
        self.with_cross = with_cross
        if with_cross:
            self.norm_cross = LayerNorm(dim, dtype)
            self.cross = MultiHeadAttention(dim, heads, rng, dtype)
        self.norm2 = LayerNorm(dim, dtype)
        self.mlp = MLP(dim, rng, dtype=dtype)

    def __call__(self, x, memory=None):
        x = x + self.attn(self.norm1(x))
        if self.with_cross:
            if memory is None:
                raise ValueError("cross-attention layer needs a memory input")
            x = x + self.cross(self.norm_cross(x), kv=memory)
        return x + self.mlp(self.norm2(x))


class Embedding(Module):
    def __init__(self, count, dim, rng, dtype=np.float32):
        self.table = Tensor(truncated_normal(rng, (count, dim), dtype=dtype), requires_grad=True)

    def __call__(self, indices):
        return T.embedding(self.table, indices)


def film(features, gamma, beta):
    """Feature-wise affine modulation: gamma * features + beta (broadcast)."""
    return features * gamma + beta


class FiLMGenerator(Module):
    """Maps a conditioning vector (e.g. a time embedding) to per-channel (gamma, beta).

    gamma is produced as a residual around 1 so the block starts near identity.
    """

    def __init__(self, cond_dim, dim, rng, dtype=np.float32):
        self.fc1 = Linear(cond_dim, dim, rng, dtype)
        self.fc2 = Linear(dim, 2 * dim, rng, dtype)
        self.dim = dim

    def __call__(self, cond):
        h = self.fc2(T.gelu(self.fc1(cond)))
        gamma = h[..., : self.dim] + 1.0
        beta = h[..., self.dim :]
        return gamma, beta


def sinusoidal_time_embedding(t, dim, max_freq=1000.0):
    """Deterministic interleaved sin/cos embedding of scalars in [0, 1].

    Frequencies grow geometrically from 1 to max_freq; at t = 0 every sin
    component is 0 and every cos component is 1. Accepts a scalar or a 1-D
    array and returns (dim,) or (N, dim) float64.
    """
    if dim % 2:
        raise ValueError("embedding dim must be even")
    t = np.asarray(t, dtype=np.float64)
    half = dim // 2
    freqs = max_freq ** (np.arange(half) / max(half - 1, 1))
    angles = t[..., None] * freqs
    out = np.empty(t.shape + (dim,), dtype=np.float64)
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out
