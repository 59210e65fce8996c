"""Small reverse-mode autodiff engine on top of numpy.

Graphs are dynamic: every op returns a new :class:`Tensor` that remembers its
parents and a closure that pushes its gradient back to them. ``backward`` walks
the graph in reverse topological order.

Layout conventions (batch size is always 1, so there is no batch axis):

* sequences are ``(T, C)`` time-major matrices;
* ``conv1d`` weights are ``(K, C_in, C_out)``;
* attention inputs are ``(H, T, d_head)``.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor", "Parameter", "ShapeMismatch", "NonScalarLoss",
    "default_dtype", "precision", "tensor", "backward", "forward", "grad_check",
    "matmul", "conv1d", "transposed_conv1d", "layer_norm", "softmax", "log_softmax",
    "relu", "sigmoid", "tanh", "add", "sub", "mul", "mean", "sum", "abs", "embedding_lookup",
    "scaled_dot_product_attention", "reshape", "transpose", "getitem", "concat", "pad_rows",
    "repeat_rows", "mean_pool_rows", "dropout", "l1_loss", "scale",
]


class ShapeMismatch(ValueError):
    def __init__(self, op: str, expected, actual):
        super().__init__(f"{op}: expected shape {expected}, got {actual}")
        self.op, self.expected, self.actual = op, expected, actual


class NonScalarLoss(ValueError):
    pass


_DTYPE = [np.float32]


def default_dtype():
    return _DTYPE[-1]


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for new tensors (``"float64"`` for grad checks)."""
    _DTYPE.append(np.dtype(dtype).type)
    try:
        yield
    finally:
        _DTYPE.pop()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), op: str = "",
                 name: str | None = None):
        if isinstance(data, (np.ndarray, np.generic)) and data.dtype in (np.float32, np.float64):
            self.data = np.asarray(data)
        else:
            self.data = np.asarray(data, dtype=default_dtype())
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = op
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def backward(self):
        return backward(self)


class Parameter(Tensor):
    """Trainable leaf tensor."""

    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(np.asarray(data, dtype=default_dtype()), requires_grad=requires_grad)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else default_dtype()
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str) -> Tensor:
    rg = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=rg, _parents=tuple(parents) if rg else (), op=op)


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def backward(loss: Tensor) -> dict[str, np.ndarray]:
    """Backpropagate from a scalar; returns ``{name: grad}`` for named leaves reached."""
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    grads = {}
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
        if not node._parents and node.name is not None and node.grad is not None:
            grads[node.name] = node.grad
    # interior grads are no longer needed; free them
    for node in order:
        if node._parents:
            node.grad = None
            node._backward = None
    return grads


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    out = _make(a.data + b.data, (a, b), "add")
    if out.requires_grad:
        def _bw(g):
            _accum(a, _unbroadcast(g, a.shape))
            _accum(b, _unbroadcast(g, b.shape))
        out._backward = _bw
    return out


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    out = _make(a.data - b.data, (a, b), "sub")
    if out.requires_grad:
        def _bw(g):
            _accum(a, _unbroadcast(g, a.shape))
            _accum(b, _unbroadcast(-g, b.shape))
        out._backward = _bw
    return out


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    out = _make(a.data * b.data, (a, b), "mul")
    if out.requires_grad:
        def _bw(g):
            _accum(a, _unbroadcast(g * b.data, a.shape))
            _accum(b, _unbroadcast(g * a.data, b.shape))
        out._backward = _bw
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = _make(a.data * a.dtype.type(c), (a,), "scale")
    if out.requires_grad:
        out._backward = lambda g: _accum(a, g * a.dtype.type(c))
    return out


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = _make(np.where(mask, a.data, 0).astype(a.dtype), (a,), "relu")
    if out.requires_grad:
        out._backward = lambda g: _accum(a, g * mask)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = (0.5 * (1.0 + np.tanh(0.5 * a.data))).astype(a.dtype)
    out = _make(y, (a,), "sigmoid")
    if out.requires_grad:
        out._backward = lambda g: _accum(a, g * y * (1 - y))
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = _make(y, (a,), "tanh")
    if out.requires_grad:
        out._backward = lambda g: _accum(a, g * (1 - y * y))
    return out


def abs(a: Tensor) -> Tensor:  # noqa: A001
    s = np.sign(a.data)  # subgradient at 0 is 0
    out = _make(np.abs(a.data), (a,), "abs")
    if out.requires_grad:
        out._backward = lambda g: _accum(a, g * s)
    return out


def dropout(a: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    if p <= 0 or rng is None:
        return a
    keep = (rng.random(a.shape) >= p).astype(a.dtype) / a.dtype.type(1 - p)
    out = _make(a.data * keep, (a,), "dropout")
    if out.requires_grad:
        out._backward = lambda g: _accum(a, g * keep)
    return out


# ---------------------------------------------------------------- reductions

def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001
    out = _make(np.asarray(a.data.sum(axis=axis), dtype=a.dtype), (a,), "sum")
    if out.requires_grad:
        def _bw(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(g, a.shape))
        out._backward = _bw
    return out


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    out = _make(np.asarray(a.data.mean(axis=axis), dtype=a.dtype), (a,), "mean")
    if out.requires_grad:
        def _bw(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(g / n, a.shape))
        out._backward = _bw
    return out


def l1_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute error; ``target`` is treated as a constant."""
    target = target.data if isinstance(target, Tensor) else np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeMismatch("l1_loss", pred.shape, target.shape)
    diff = pred.data - target
    n = diff.size
    out = _make(np.asarray(np.abs(diff).mean(), dtype=pred.dtype), (pred,), "l1")
    if out.requires_grad:
        s = np.sign(diff)
        out._backward = lambda g: _accum(pred, s * (g / n))
    return out


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for 2-D or batched 3-D operands (numpy broadcasting rules)."""
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    if a.shape[-1] != b.shape[-2 if b.data.ndim > 1 else 0]:
        raise ShapeMismatch("matmul", (a.shape[-1], "..."), b.shape)
    out = _make(a.data @ b.data, (a, b), "matmul")
    if out.requires_grad:
        def _bw(g):
            if a.requires_grad:
                _accum(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))
        out._backward = _bw
    return out


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeMismatch("embedding_lookup", "(T,)", ids.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding id out of range [0, {table.shape[0]})")
    out = _make(table.data[ids], (table,), "embedding")
    if out.requires_grad:
        def _bw(g):
            dt = np.zeros_like(table.data)
            np.add.at(dt, ids, g)
            _accum(table, dt)
        out._backward = _bw
    return out


# ---------------------------------------------------------------- normalisation / softmax

def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then ``gain * xhat + bias``."""
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeMismatch("layer_norm", (x.shape[-1],), (gain.shape, bias.shape))
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = _make(xhat * gain.data + bias.data, (x, gain, bias), "layer_norm")
    if out.requires_grad:
        def _bw(g):
            _accum(gain, _unbroadcast(g * xhat, gain.shape))
            _accum(bias, _unbroadcast(g, bias.shape))
            if x.requires_grad:
                gx = g * gain.data
                dx = rstd * (gx - gx.mean(axis=-1, keepdims=True)
                             - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
                _accum(x, dx)
        out._backward = _bw
    return out


def _softmax_np(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    y = _softmax_np(x.data, axis)
    out = _make(y, (x,), "softmax")
    if out.requires_grad:
        out._backward = lambda g: _accum(x, y * (g - (g * y).sum(axis=axis, keepdims=True)))
    return out


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    out = _make(y, (x,), "log_softmax")
    if out.requires_grad:
        out._backward = lambda g: _accum(x, g - np.exp(y) * g.sum(axis=axis, keepdims=True))
    return out


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor, bias: np.ndarray | None = None) -> Tensor:
    """Attention over ``(H, T, d)`` inputs: ``softmax(q k^T / sqrt(d) + bias) v``.

    ``bias`` is a constant ``(T, T)`` additive mask (use ``-inf`` to forbid a pair).
    """
    if q.data.ndim != 3 or q.shape != k.shape or k.shape[:2] != v.shape[:2]:
        raise ShapeMismatch("attention", q.shape, (k.shape, v.shape))
    c = q.dtype.type(1.0 / np.sqrt(q.shape[-1]))
    scores = (q.data @ np.swapaxes(k.data, -1, -2)) * c
    if bias is not None:
        scores = scores + bias.astype(scores.dtype)
    attn = _softmax_np(scores)
    out = _make(attn @ v.data, (q, k, v), "attention")
    if out.requires_grad:
        def _bw(g):
            if v.requires_grad:
                _accum(v, np.swapaxes(attn, -1, -2) @ g)
            da = g @ np.swapaxes(v.data, -1, -2)
            ds = attn * (da - (da * attn).sum(axis=-1, keepdims=True)) * c
            if q.requires_grad:
                _accum(q, ds @ k.data)
            if k.requires_grad:
                _accum(k, np.swapaxes(ds, -1, -2) @ q.data)
        out._backward = _bw
    return out


# ---------------------------------------------------------------- convolution

def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """1-D convolution over time. ``x``: (T, C_in), ``w``: (K, C_in, C_out).

    Output length is ``(T + 2*padding - K) // stride + 1`` (zero padding both sides).
    """
    if x.data.ndim != 2 or w.data.ndim != 3 or w.shape[1] != x.shape[1]:
        raise ShapeMismatch("conv1d", ("T", w.shape[1] if w.data.ndim == 3 else "?"), x.shape)
    K, cin, cout = w.shape
    T = x.shape[0]
    t_out = (T + 2 * padding - K) // stride + 1
    if t_out < 1:
        raise ShapeMismatch("conv1d", f"length >= {K - 2 * padding}", x.shape)
    xp = np.pad(x.data, ((padding, padding), (0, 0))) if padding else x.data
    span = stride * (t_out - 1) + 1
    cols = np.concatenate([xp[k:k + span:stride] for k in range(K)], axis=1)  # (t_out, K*cin)
    wmat = w.data.reshape(K * cin, cout)
    y = cols @ wmat
    if b is not None:
        y = y + b.data
    parents = (x, w) if b is None else (x, w, b)
    out = _make(y, parents, "conv1d")
    if out.requires_grad:
        def _bw(g):
            if w.requires_grad:
                _accum(w, (cols.T @ g).reshape(K, cin, cout))
            if b is not None:
                _accum(b, g.sum(axis=0))
            if x.requires_grad:
                dcols = (g @ wmat.T).reshape(t_out, K, cin)
                dxp = np.zeros_like(xp)
                for k in range(K):
                    dxp[k:k + span:stride] += dcols[:, k]
                _accum(x, dxp[padding:padding + T] if padding else dxp)
        out._backward = _bw
    return out


def transposed_conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 2,
                      padding: int = 1) -> Tensor:
    """Transposed 1-D convolution. ``x``: (T, C_in), ``w``: (K, C_in, C_out).

    Output length is ``(T - 1) * stride - 2 * padding + K``; with ``K = 4, stride = 2,
    padding = 1`` this is exactly ``2 * T``.
    """
    if x.data.ndim != 2 or w.data.ndim != 3 or w.shape[1] != x.shape[1]:
        raise ShapeMismatch("transposed_conv1d", ("T", w.shape[1] if w.data.ndim == 3 else "?"), x.shape)
    K, cin, cout = w.shape
    T = x.shape[0]
    full_len = (T - 1) * stride + K
    t_out = full_len - 2 * padding
    if t_out < 1:
        raise ShapeMismatch("transposed_conv1d", "positive output length", x.shape)
    span = stride * (T - 1) + 1
    full = np.zeros((full_len, cout), dtype=x.dtype)
    for k in range(K):
        full[k:k + span:stride] += x.data @ w.data[k]
    y = full[padding:padding + t_out]
    if b is not None:
        y = y + b.data
    parents = (x, w) if b is None else (x, w, b)
    out = _make(np.ascontiguousarray(y), parents, "transposed_conv1d")
    if out.requires_grad:
        def _bw(g):
            gfull = np.zeros((full_len, cout), dtype=g.dtype)
            gfull[padding:padding + t_out] = g
            if b is not None:
                _accum(b, g.sum(axis=0))
            if w.requires_grad:
                _accum(w, np.stack([x.data.T @ gfull[k:k + span:stride] for k in range(K)]))
            if x.requires_grad:
                dx = np.zeros_like(x.data)
                for k in range(K):
                    dx += gfull[k:k + span:stride] @ w.data[k].T
                _accum(x, dx)
        out._backward = _bw
    return out


# ---------------------------------------------------------------- shape plumbing

def reshape(a: Tensor, shape) -> Tensor:
    out = _make(a.data.reshape(shape), (a,), "reshape")
    if out.requires_grad:
        out._backward = lambda g: _accum(a, g.reshape(a.shape))
    return out


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    out = _make(np.transpose(a.data, axes), (a,), "transpose")
    if out.requires_grad:
        out._backward = lambda g: _accum(a, np.transpose(g, inv))
    return out


def getitem(a: Tensor, idx) -> Tensor:
    out = _make(np.ascontiguousarray(a.data[idx]), (a,), "getitem")
    if out.requires_grad:
        fancy = isinstance(idx, (np.ndarray, list)) or (
            isinstance(idx, tuple) and any(isinstance(i, (np.ndarray, list)) for i in idx))

        def _bw(g):
            da = np.zeros_like(a.data)
            if fancy:
                np.add.at(da, idx, g)
            else:
                da[idx] = g
            _accum(a, da)
        out._backward = _bw
    return out


def concat(ts: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in ts]
    out = _make(np.concatenate([t.data for t in ts], axis=axis), tuple(ts), "concat")
    if out.requires_grad:
        def _bw(g):
            for t, piece in zip(ts, np.split(g, np.cumsum(sizes)[:-1], axis=axis)):
                _accum(t, piece)
        out._backward = _bw
    return out


def pad_rows(a: Tensor, before: int, after: int) -> Tensor:
    """Zero-pad (or, for negative ``after``, trim) along axis 0."""
    T = a.shape[0]
    if after < 0:
        return getitem(a, slice(0, T + after))
    width = [(before, after)] + [(0, 0)] * (a.data.ndim - 1)
    out = _make(np.pad(a.data, width), (a,), "pad_rows")
    if out.requires_grad:
        out._backward = lambda g: _accum(a, g[before:before + T])
    return out


def repeat_rows(a: Tensor, factor: int) -> Tensor:
    """Nearest-neighbour upsampling along time."""
    out = _make(np.repeat(a.data, factor, axis=0), (a,), "repeat_rows")
    if out.requires_grad:
        out._backward = lambda g: _accum(a, g.reshape(a.shape[0], factor, *a.shape[1:]).sum(axis=1))
    return out


def mean_pool_rows(a: Tensor, factor: int) -> Tensor:
    """Non-overlapping mean pool along time; a trailing partial block is averaged on its own."""
    T = a.shape[0]
    n = -(-T // factor)
    counts = np.full(n, factor, dtype=a.dtype)
    counts[-1] = T - factor * (n - 1)
    padded = np.pad(a.data, [(0, n * factor - T)] + [(0, 0)] * (a.data.ndim - 1))
    y = padded.reshape(n, factor, *a.shape[1:]).sum(axis=1) / counts.reshape(-1, *([1] * (a.data.ndim - 1)))
    out = _make(y.astype(a.dtype), (a,), "mean_pool_rows")
    if out.requires_grad:
        def _bw(g):
            gg = g / counts.reshape(-1, *([1] * (a.data.ndim - 1)))
            _accum(a, np.repeat(gg, factor, axis=0)[:T])
        out._backward = _bw
    return out


# ---------------------------------------------------------------- generic dispatch / checking

_OPS: dict[str, Callable[..., Tensor]] = {
    "matmul": matmul, "conv1d": conv1d, "transposed_conv1d": transposed_conv1d,
    "layer_norm": layer_norm, "softmax": softmax, "log_softmax": log_softmax, "relu": relu,
    "sigmoid": sigmoid, "tanh": tanh, "add": add, "mul": mul, "mean": mean, "abs": abs,
    "embedding_lookup": embedding_lookup, "scaled_dot_product_attention": scaled_dot_product_attention,
}


def forward(op_kind: str, *inputs, **kwargs) -> Tensor:
    """Apply a named op, e.g. ``forward("conv1d", x, w, stride=2, padding=1)``."""
    try:
        fn = _OPS[op_kind]
    except KeyError:
        raise ValueError(f"unknown op_kind {op_kind!r}; known: {sorted(_OPS)}") from None
    return fn(*inputs, **kwargs)


def _numeric_grad(f: Callable[[], float], x: np.ndarray, eps: float) -> np.ndarray:
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * eps)
    return g


def check_gradients(loss_fn: Callable[[], Tensor], params: Iterable[Tensor], eps: float = 1e-5) -> float:
    """Max relative error ``|analytic - numeric| / max(1, |analytic|)`` over ``params``.

    ``loss_fn`` must rebuild the graph from the current parameter data on every call.
    """
    params = list(params)
    for p in params:
        p.grad = None
    backward(loss_fn())
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = _numeric_grad(lambda: float(loss_fn().data), p.data, eps)
        err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
        worst = max(worst, float(err.max()) if err.size else 0.0)
    return worst


def grad_check(op_kind: str, input_shapes: Sequence[tuple], eps: float = 1e-5, seed: int = 0,
               **kwargs) -> float:
    """Finite-difference check of a single op with random float64 inputs.

    The scalar probe is ``sum(out * r)`` for a fixed random ``r`` so every output
    element contributes. Returns the max relative error.
    """
    if not 1e-6 <= eps <= 1e-4:
        raise ValueError("eps must lie in [1e-6, 1e-4]")
    rng = np.random.default_rng(seed)
    with precision("float64"):
        if op_kind == "embedding_lookup":
            (v, d), (n,) = input_shapes
            params = [Parameter(rng.normal(size=(v, d)))]
            ids = rng.integers(0, v, size=n)
            call = lambda: embedding_lookup(params[0], ids)  # noqa: E731
        else:
            params = [Parameter(rng.normal(size=s)) for s in input_shapes]
            if op_kind == "layer_norm" and len(params) == 3:
                params[1].data += 1.0
            call = lambda: forward(op_kind, *params, **kwargs)  # noqa: E731
        probe = rng.normal(size=call().shape)
        return check_gradients(lambda: sum(mul(call(), probe)), params, eps)
