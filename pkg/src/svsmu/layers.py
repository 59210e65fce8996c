"""Parameter containers and the building blocks shared by classifier and generator."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor

INIT_STD = 0.02


def trunc_normal(rng: np.random.Generator, shape, std: float = INIT_STD) -> np.ndarray:
    """Normal(0, std) truncated at two standard deviations (resampled, not clipped)."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(T.default_dtype())


class Module:
    """Holds named parameters and child modules; attribute order defines naming order."""

    training = True

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            yield from _walk(val, f"{prefix}{key}")

    def modules(self) -> Iterator["Module"]:
        yield self
        for val in vars(self).values():
            yield from _walk_modules(val)

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def name_parameters(self, prefix: str = ""):
        """Stamp each parameter with its dotted name so ``backward`` can report it."""
        for name, p in self.named_parameters(prefix):
            p.name = name
        return self


def _walk(val, name):
    if isinstance(val, Parameter):
        yield name, val
    elif isinstance(val, Module):
        yield from val.named_parameters(name + ".")
    elif isinstance(val, list):
        for i, item in enumerate(val):
            yield from _walk(item, f"{name}.{i}")


def _walk_modules(val):
    if isinstance(val, Module):
        yield from val.modules()
    elif isinstance(val, list):
        for item in val:
            yield from _walk_modules(item)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.w = Parameter(trunc_normal(rng, (d_in, d_out)))
        self.b = Parameter(np.zeros(d_out, dtype=T.default_dtype())) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.w)
        return T.add(y, self.b) if self.b is not None else y


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int | None = None, std: float = INIT_STD):
        self.w = Parameter(trunc_normal(rng, (kernel, c_in, c_out), std))
        self.b = Parameter(np.zeros(c_out, dtype=T.default_dtype()))
        self.stride = stride
        self.padding = (kernel - 1) // 2 if padding is None else padding

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.w, self.b, stride=self.stride, padding=self.padding)


class ConvTranspose1d(Module):
    """Stride-2 time upsampler (kernel 4, padding 1 gives exactly twice the length)."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, kernel: int = 4,
                 stride: int = 2, padding: int = 1):
        self.w = Parameter(trunc_normal(rng, (kernel, c_in, c_out)))
        self.b = Parameter(np.zeros(c_out, dtype=T.default_dtype()))
        self.stride, self.padding = stride, padding

    def __call__(self, x: Tensor) -> Tensor:
        return T.transposed_conv1d(x, self.w, self.b, stride=self.stride, padding=self.padding)


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gain = Parameter(np.ones(d, dtype=T.default_dtype()))
        self.bias = Parameter(np.zeros(d, dtype=T.default_dtype()))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias)


class Embedding(Module):
    def __init__(self, n: int, d: int, rng: np.random.Generator):
        self.table = Parameter(trunc_normal(rng, (n, d)))

    def __call__(self, ids) -> Tensor:
        return T.embedding_lookup(self.table, ids)

    def soft(self, probs: Tensor) -> Tensor:
        """Probability-weighted mixture of embedding rows: ``probs @ table``."""
        if probs.shape[-1] != self.table.shape[0]:
            raise T.ShapeMismatch("soft embedding", (None, self.table.shape[0]), probs.shape)
        return T.matmul(probs, self.table)


def sinusoidal_encoding(length: int, d: int, dtype=None) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(d // 2)[None, :]
    angle = pos / np.power(10000.0, 2 * i / d)
    pe = np.zeros((length, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe.astype(dtype or T.default_dtype())


def band_mask(length: int, window: int | None) -> np.ndarray | None:
    """Additive mask letting each frame attend only to frames within ``window`` steps."""
    if window is None:
        return None
    idx = np.arange(length)
    return np.where(np.abs(idx[:, None] - idx[None, :]) <= window, 0.0, -np.inf)


class MultiHeadSelfAttention(Module):
    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator, window: int | None = None):
        if d_model % n_heads:
            raise ValueError(f"d_model {d_model} not divisible by n_heads {n_heads}")
        self.n_heads = n_heads
        self.window = window
        self.qkv = Linear(d_model, 3 * d_model, rng)
        self.out = Linear(d_model, d_model, rng)

    def __call__(self, x: Tensor) -> Tensor:
        t, d = x.shape
        h = self.n_heads
        qkv = T.transpose(T.reshape(self.qkv(x), (t, 3, h, d // h)), (1, 2, 0, 3))  # (3, H, T, dh)
        q, k, v = qkv[0], qkv[1], qkv[2]
        y = T.scaled_dot_product_attention(q, k, v, band_mask(t, self.window))
        y = T.reshape(T.transpose(y, (1, 0, 2)), (t, d))
        return self.out(y)


class TransformerBlock(Module):
    """Pre-norm block: ``x + MHA(LN(x))`` then ``x + FFN(LN(x))``. No causal mask;
    ``window`` optionally limits attention to a band around each frame."""

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator, d_ff: int | None = None,
                 dropout: float = 0.0, window: int | None = None):
        d_ff = d_ff or 4 * d_model
        self.ln1 = LayerNorm(d_model)
        self.attn = MultiHeadSelfAttention(d_model, n_heads, rng, window)
        self.ln2 = LayerNorm(d_model)
        self.ff1 = Linear(d_model, d_ff, rng)
        self.ff2 = Linear(d_ff, d_model, rng)
        self.dropout = dropout

    def __call__(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        p = self.dropout if self.training else 0.0
        x = T.add(x, T.dropout(self.attn(self.ln1(x)), p, rng))
        h = self.ff2(T.relu(self.ff1(self.ln2(x))))
        return T.add(x, T.dropout(h, p, rng))


class TransformerStack(Module):
    def __init__(self, d_model: int, n_layers: int, n_heads: int, rng: np.random.Generator,
                 dropout: float = 0.0, window: int | None = None):
        self.blocks = [TransformerBlock(d_model, n_heads, rng, dropout=dropout, window=window)
                       for _ in range(n_layers)]
        self.ln_f = LayerNorm(d_model)

    def __call__(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        for blk in self.blocks:
            x = blk(x, rng)
        return self.ln_f(x)
