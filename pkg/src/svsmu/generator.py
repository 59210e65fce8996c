"""Singing voice generator: phoneme and pitch transformer encoders, a length-preserving
transformer decoder producing a downsampled mel, and a time-wise supersampler."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .classifier import PhonemeProbMatrix
from .layers import Conv1d, ConvTranspose1d, Embedding, Linear, Module, TransformerStack, sinusoidal_encoding
from .pitch import MIDI_HI
from .tensor import Tensor

N_PITCH_TOKENS = MIDI_HI + 1  # REST=0 plus MIDI 1..96


class UnknownSymbolId(IndexError):
    pass


class TokenOutOfRange(IndexError):
    pass


class LengthMismatch(ValueError):
    pass


@dataclass
class GeneratorConfig:
    n_phonemes: int
    d_model: int = 128
    n_enc_layers: int = 3
    n_dec_layers: int = 3
    n_heads: int = 4
    downsample: int = 2
    highway_blocks: int = 2
    dropout: float = 0.1
    n_mels: int = 80

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.downsample not in (2, 4):
            raise ValueError("downsample must be 2 or 4")

    @classmethod
    def desk(cls, n_phonemes: int, **kw) -> "GeneratorConfig":
        base = dict(d_model=64, n_enc_layers=2, n_dec_layers=2, n_heads=2, highway_blocks=1, dropout=0.0)
        base.update(kw)
        return cls(n_phonemes, **base)


@dataclass
class MelPair:
    coarse: Tensor  # (T_ds, 80)
    full: Tensor    # (D * T_ds, 80)


class SequenceEncoder(Module):
    """Embedding (scaled by sqrt(d)) + sinusoidal positions + transformer stack."""

    def __init__(self, n_symbols: int, d_model: int, n_layers: int, n_heads: int,
                 rng: np.random.Generator, dropout: float = 0.0):
        self.embed = Embedding(n_symbols, d_model, rng)
        self.stack = TransformerStack(d_model, n_layers, n_heads, rng, dropout=dropout)
        self.d_model = d_model

    def _finish(self, e: Tensor, rng) -> Tensor:
        if e.shape[0] == 0:
            raise ValueError("cannot encode an empty sequence")
        e = T.scale(e, math.sqrt(self.d_model))
        e = T.add(e, sinusoidal_encoding(e.shape[0], self.d_model, e.dtype))
        return self.stack(e, rng)

    def hard(self, ids, rng=None) -> Tensor:
        return self._finish(self.embed(ids), rng)

    def soft(self, probs: Tensor, rng=None) -> Tensor:
        return self._finish(self.embed.soft(probs), rng)


class HighwayBlock(Module):
    """``g * relu(H(x)) + (1 - g) * x`` with ``g = sigmoid(G(x))``; H, G are width-3 convs."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.h = Conv1d(channels, channels, 3, rng)
        self.g = Conv1d(channels, channels, 3, rng)

    def __call__(self, x: Tensor) -> Tensor:
        gate = T.sigmoid(self.g(x))
        return T.add(T.mul(gate, T.relu(self.h(x))), T.mul(T.sub(1.0, gate), x))


class SuperSampler(Module):
    """Upsamples the coarse mel along time only, ``log2(D)`` stride-2 stages.

    Each stage: transposed conv, plus projected encoder conditioning (nearest-
    neighbour upsampled to the stage rate), then highway blocks. The output is a
    residual on top of the frame-repeated coarse mel.
    """

    def __init__(self, cfg: GeneratorConfig, rng: np.random.Generator):
        c = cfg.d_model
        self.factor = cfg.downsample
        self.inp = Conv1d(cfg.n_mels, c, 1, rng)
        n_stages = int(round(math.log2(cfg.downsample)))
        self.ups = [ConvTranspose1d(c, c, rng) for _ in range(n_stages)]
        self.cond_ph = [Linear(cfg.d_model, c, rng) for _ in range(n_stages)]
        self.cond_pitch = [Linear(cfg.d_model, c, rng) for _ in range(n_stages)]
        self.highway = [[HighwayBlock(c, rng) for _ in range(cfg.highway_blocks)] for _ in range(n_stages)]
        self.out = Conv1d(c, cfg.n_mels, 1, rng)

    def __call__(self, coarse: Tensor, ph_hidden: Tensor, pitch_hidden: Tensor) -> Tensor:
        x = self.inp(coarse)
        rate = 1
        for up, cp, cq, blocks in zip(self.ups, self.cond_ph, self.cond_pitch, self.highway):
            x = up(x)
            rate *= 2
            cond = T.add(cp(ph_hidden), cq(pitch_hidden))
            x = T.add(x, T.repeat_rows(cond, rate))
            for blk in blocks:
                x = blk(x)
        return T.add(self.out(x), T.repeat_rows(coarse, self.factor))


class SingingVoiceGenerator(Module):
    def __init__(self, cfg: GeneratorConfig, rng: np.random.Generator):
        self.cfg = cfg
        d = cfg.d_model
        self.phoneme_encoder = SequenceEncoder(cfg.n_phonemes, d, cfg.n_enc_layers, cfg.n_heads, rng, cfg.dropout)
        self.pitch_encoder = SequenceEncoder(N_PITCH_TOKENS, d, cfg.n_enc_layers, cfg.n_heads, rng, cfg.dropout)
        self.decoder = TransformerStack(d, cfg.n_dec_layers, cfg.n_heads, rng, dropout=cfg.dropout)
        self.mel_head = Linear(d, cfg.n_mels, rng)
        self.supersampler = SuperSampler(cfg, rng)

    def embed_soft_phonemes(self, probs: PhonemeProbMatrix | Tensor) -> Tensor:
        p = probs.probs if isinstance(probs, PhonemeProbMatrix) else probs
        return self.phoneme_encoder.embed.soft(p)

    def encode_phonemes(self, inp, rng=None) -> Tensor:
        """Hard ids (supervised / inference) or a probability matrix (unsupervised)."""
        if isinstance(inp, (PhonemeProbMatrix, Tensor)):
            p = inp.probs if isinstance(inp, PhonemeProbMatrix) else inp
            return self.phoneme_encoder.soft(p, rng)
        ids = np.asarray(inp, dtype=np.int64)
        if ids.size == 0:
            raise ValueError("cannot encode an empty phoneme sequence")
        if ids.min() < 0 or ids.max() >= self.cfg.n_phonemes:
            raise UnknownSymbolId(f"phoneme id outside [0, {self.cfg.n_phonemes})")
        return self.phoneme_encoder.hard(ids, rng)

    def encode_pitch(self, tokens, rng=None) -> Tensor:
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.size == 0:
            raise ValueError("cannot encode an empty pitch sequence")
        if tokens.min() < 0 or tokens.max() > MIDI_HI:
            raise TokenOutOfRange(f"pitch token outside [0, {MIDI_HI}]")
        return self.pitch_encoder.hard(tokens, rng)

    def decode(self, ph_hidden: Tensor, pitch_hidden: Tensor, rng=None) -> Tensor:
        if ph_hidden.shape != pitch_hidden.shape:
            raise LengthMismatch(f"phoneme {ph_hidden.shape} vs pitch {pitch_hidden.shape}")
        return self.mel_head(self.decoder(T.add(ph_hidden, pitch_hidden), rng))

    def supersample(self, coarse: Tensor, ph_hidden: Tensor, pitch_hidden: Tensor) -> Tensor:
        return self.supersampler(coarse, ph_hidden, pitch_hidden)

    def __call__(self, phonemes, pitch_tokens, rng=None) -> MelPair:
        ph = self.encode_phonemes(phonemes, rng)
        pt = self.encode_pitch(pitch_tokens, rng)
        coarse = self.decode(ph, pt, rng)
        return MelPair(coarse, self.supersample(coarse, ph, pt))

    def infer(self, phoneme_ids, pitch_tokens) -> np.ndarray:
        """Hard-path synthesis; returns the full-rate mel clamped to [0, 1]."""
        was = self.training
        self.eval()
        try:
            pair = self(phoneme_ids, pitch_tokens)
        finally:
            self.train(was)
        return np.clip(pair.full.data, 0.0, 1.0)


def coarse_target(mel: np.ndarray, factor: int) -> np.ndarray:
    """Non-overlapping mean pool over ``factor`` frames (partial tail block averaged alone)."""
    return T.mean_pool_rows(T.Tensor(np.asarray(mel, dtype=T.default_dtype())), factor).data


def _match(pred: Tensor, target: np.ndarray, slack: int, what: str) -> tuple[Tensor, np.ndarray]:
    n_p, n_t = pred.shape[0], target.shape[0]
    if abs(n_p - n_t) > slack:
        raise LengthMismatch(f"{what}: prediction {n_p} vs target {n_t} frames")
    n = min(n_p, n_t)
    if n_p > n:
        pred = T.getitem(pred, slice(0, n))
    return pred, target[:n]


def generator_loss(pair: MelPair, mel: np.ndarray, factor: int) -> tuple[Tensor, Tensor, Tensor]:
    """``L1(coarse, meanpool(M)) + L1(full, M)``; returns ``(total, coarse_term, full_term)``.

    Length differences of up to ``factor`` frames are trimmed.
    """
    mel = np.asarray(mel, dtype=pair.full.dtype)
    mel_d = coarse_target(mel, factor).astype(mel.dtype)
    pc, tc = _match(pair.coarse, mel_d, factor, "coarse")
    pf, tf = _match(pair.full, mel, factor, "full")
    lc = T.l1_loss(pc, tc)
    lf = T.l1_loss(pf, tf)
    return T.add(lc, lf), lc, lf
