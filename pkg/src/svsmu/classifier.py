"""Phoneme classifier: strided-conv subsampling + transformer encoder, CTC loss,
unvoice penalty and threshold-based alignment read-out."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import Conv1d, Linear, Module, TransformerStack, sinusoidal_encoding
from .score import BLANK
from .tensor import Tensor


class InfeasibleTarget(ValueError):
    pass


class TooShort(ValueError):
    pass


@dataclass
class ClassifierConfig:
    n_phonemes: int
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    subsample_factor: int = 2
    dropout: float = 0.1
    n_mels: int = 80
    attn_window: int | None = None  # frames each side; None attends globally

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.subsample_factor not in (2, 4):
            raise ValueError("subsample_factor must be 2 or 4")

    @classmethod
    def desk(cls, n_phonemes: int, **kw) -> "ClassifierConfig":
        base = dict(d_model=64, n_layers=2, n_heads=2, dropout=0.0)
        base.update(kw)
        return cls(n_phonemes, **base)


@dataclass
class PhonemeProbMatrix:
    log_probs: Tensor  # (T_ds, V)
    probs: Tensor

    @property
    def n_frames(self) -> int:
        return self.probs.shape[0]

    def numpy(self) -> np.ndarray:
        return self.probs.data


class PhonemeClassifier(Module):
    def __init__(self, cfg: ClassifierConfig, rng: np.random.Generator):
        self.cfg = cfg
        d = cfg.d_model
        # He-scaled so the mel content is not swamped by the positional term at init
        self.convs = [Conv1d(cfg.n_mels, d, 3, rng, stride=2, padding=1, std=math.sqrt(2.0 / (3 * cfg.n_mels)))]
        if cfg.subsample_factor == 4:
            self.convs.append(Conv1d(d, d, 3, rng, stride=2, padding=1, std=math.sqrt(2.0 / (3 * d))))
        self.proj = Linear(d, d, rng)
        self.encoder = TransformerStack(d, cfg.n_layers, cfg.n_heads, rng, dropout=cfg.dropout,
                                        window=cfg.attn_window)
        self.head = Linear(d, cfg.n_phonemes, rng)

    def output_length(self, n_frames: int) -> int:
        return -(-n_frames // self.cfg.subsample_factor)

    def subsample(self, mel) -> Tensor:
        """(T, 80) mel -> (ceil(T / D), d_model) features, scaled by sqrt(d), plus positions."""
        x = mel if isinstance(mel, Tensor) else T.Tensor(np.asarray(mel, dtype=T.default_dtype()))
        if x.shape[0] < self.cfg.subsample_factor:
            raise TooShort(f"need at least {self.cfg.subsample_factor} frames, got {x.shape[0]}")
        for conv in self.convs:
            x = T.relu(conv(x))
        x = T.scale(self.proj(x), math.sqrt(self.cfg.d_model))
        return T.add(x, sinusoidal_encoding(x.shape[0], self.cfg.d_model, x.dtype))

    def classify(self, features: Tensor, rng: np.random.Generator | None = None) -> PhonemeProbMatrix:
        h = self.encoder(T.dropout(features, self.cfg.dropout if self.training else 0.0, rng), rng)
        logits = self.head(h)
        return PhonemeProbMatrix(T.log_softmax(logits), T.softmax(logits))

    def __call__(self, mel, rng: np.random.Generator | None = None) -> PhonemeProbMatrix:
        return self.classify(self.subsample(mel), rng)


# ---------------------------------------------------------------- CTC

def _extend(targets: np.ndarray) -> np.ndarray:
    ext = np.full(2 * len(targets) + 1, BLANK, dtype=np.int64)
    ext[1::2] = targets
    return ext


def ctc_min_length(targets) -> int:
    targets = np.asarray(targets)
    return len(targets) + int(np.sum(targets[1:] == targets[:-1]))


def ctc_forward_backward(lp: np.ndarray, targets: np.ndarray):
    """Log-domain alpha (emissions up to t) and beta (emissions after t) over the
    blank-extended target; returns ``(log_alpha, log_beta, log_p, ext)``."""
    n_t = lp.shape[0]
    ext = _extend(targets)
    S = ext.size
    skip = np.zeros(S, dtype=bool)
    skip[2:] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])
    emit = lp[:, ext]  # (T, S)
    ninf = -np.inf
    la = np.full((n_t, S), ninf)
    la[0, 0] = emit[0, 0]
    if S > 1:
        la[0, 1] = emit[0, 1]
    with np.errstate(invalid="ignore"):
        for t in range(1, n_t):
            prev = la[t - 1]
            a = prev.copy()
            a[1:] = np.logaddexp(a[1:], prev[:-1])
            a[2:] = np.where(skip[2:], np.logaddexp(a[2:], prev[:-2]), a[2:])
            la[t] = a + emit[t]
        lb = np.full((n_t, S), ninf)
        lb[-1, -1] = 0.0
        if S > 1:
            lb[-1, -2] = 0.0
        for t in range(n_t - 2, -1, -1):
            nxt = lb[t + 1] + emit[t + 1]
            b = nxt.copy()
            b[:-1] = np.logaddexp(b[:-1], nxt[1:])
            b[:-2] = np.where(skip[2:], np.logaddexp(b[:-2], nxt[2:]), b[:-2])
            lb[t] = b
    log_p = np.logaddexp(la[-1, -1], la[-1, -2]) if S > 1 else la[-1, -1]
    return la, lb, log_p, ext


def ctc_loss(log_probs: Tensor, targets) -> Tensor:
    """Negative log of the total probability of all CTC alignments of ``targets``.

    ``log_probs`` is (T, V) with BLANK at index 0. Differentiable w.r.t. ``log_probs``.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if targets.size == 0:
        raise InfeasibleTarget("empty target sequence")
    if np.any(targets == BLANK):
        raise ValueError("targets must not contain BLANK")
    n_t = log_probs.shape[0]
    need = ctc_min_length(targets)
    if n_t < need:
        raise InfeasibleTarget(f"{n_t} frames cannot emit {len(targets)} labels (need {need})")
    lp = log_probs.data.astype(np.float64)
    la, lb, log_p, ext = ctc_forward_backward(lp, targets)
    if not np.isfinite(log_p):
        raise InfeasibleTarget("target has zero probability")
    out = T._make(np.asarray(-log_p, dtype=log_probs.dtype), (log_probs,), "ctc")
    if out.requires_grad:
        def _bw(g):
            occ = np.exp(la + lb - log_p)  # (T, S) state occupancy
            grad = np.zeros_like(lp)
            np.add.at(grad, (slice(None), ext), occ)
            T._accum(log_probs, (-float(g) * grad).astype(log_probs.dtype))
        out._backward = _bw
    return out


def unvoice_penalty(probs: PhonemeProbMatrix | Tensor, voiced) -> Tensor:
    """Mean BLANK probability over voiced frames (0 if none are voiced)."""
    p = probs.probs if isinstance(probs, PhonemeProbMatrix) else probs
    voiced = np.asarray(voiced, dtype=bool)
    if voiced.size != p.shape[0]:
        raise T.ShapeMismatch("unvoice_penalty", (p.shape[0],), voiced.shape)
    idx = np.flatnonzero(voiced)
    if idx.size == 0:
        return T.Tensor(np.zeros((), dtype=p.dtype))
    return T.mean(T.getitem(p, (idx, np.full(idx.size, BLANK))))


def greedy_align(probs, threshold: float = 0.5) -> list[dict]:
    """Maximal runs in which one non-BLANK symbol's probability stays above ``threshold``.

    Returns ``[{"phoneme": id, "start_frame": a, "end_frame": b}]`` with inclusive ends.
    """
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    p = probs.numpy() if hasattr(probs, "numpy") else np.asarray(probs)
    best = p.argmax(axis=1)
    ok = (p[np.arange(len(p)), best] > threshold) & (best != BLANK)
    segs = []
    t = 0
    while t < len(p):
        if not ok[t]:
            t += 1
            continue
        k = best[t]
        start = t
        while t + 1 < len(p) and ok[t + 1] and best[t + 1] == k:
            t += 1
        segs.append({"phoneme": int(k), "start_frame": int(start), "end_frame": int(t)})
        t += 1
    return segs


def greedy_decode(probs) -> list[int]:
    """Best-path CTC decode (argmax, merge repeats, drop BLANK)."""
    p = probs.numpy() if hasattr(probs, "numpy") else np.asarray(probs)
    best = p.argmax(axis=1)
    out, prev = [], None
    for k in best:
        if k != prev and k != BLANK:
            out.append(int(k))
        prev = k
    return out
