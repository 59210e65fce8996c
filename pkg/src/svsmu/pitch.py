"""F0 estimation, MIDI quantisation and voicing masks for the pitch pseudo-labels.

The estimator is a YIN-style cumulative-mean-normalised difference function
evaluated on the same left-aligned frame grid as the mel-spectrogram.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import HOP, N_FFT, SAMPLE_RATE, AudioClip, UnsupportedEncoding

F0_MIN, F0_MAX = 50.0, 1200.0
REST = 0
MIDI_LO, MIDI_HI = 36, 96


class NonPositiveF0(ValueError):
    pass


@dataclass
class PitchContour:
    f0_hz: np.ndarray
    voiced: np.ndarray
    frame_rate: float = SAMPLE_RATE / HOP

    def __post_init__(self):
        self.f0_hz = np.asarray(self.f0_hz, dtype=np.float64)
        self.voiced = np.asarray(self.voiced, dtype=bool)
        if self.f0_hz.shape != self.voiced.shape:
            raise ValueError("f0_hz and voiced must have equal length")
        if np.any((self.f0_hz > 0) != self.voiced):
            raise ValueError("f0_hz > 0 must coincide with voiced")

    def __len__(self):
        return self.f0_hz.size


def hz_to_midi(f0):
    f0 = np.asarray(f0, dtype=np.float64)
    if np.any(f0 <= 0):
        raise NonPositiveF0("F0 must be positive")
    out = 69.0 + 12.0 * np.log2(f0 / 440.0)
    return float(out) if out.ndim == 0 else out


def midi_to_hz(m):
    return 440.0 * 2.0 ** ((np.asarray(m, dtype=np.float64) - 69.0) / 12.0)


def _cmndf(frames: np.ndarray, w: int, tau_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative-mean-normalised difference d'(tau) for tau in [0, tau_max], plus the
    energy ratio between the lagged span and the head span at each tau."""
    n = frames.shape[1]
    nfft = 1 << int(np.ceil(np.log2(n + w)))
    # r(tau) = sum_j x[j] x[j + tau] for j < w
    spec_full = np.fft.rfft(frames, nfft, axis=1)
    spec_head = np.fft.rfft(frames[:, :w], nfft, axis=1)
    r = np.fft.irfft(np.conj(spec_head) * spec_full, nfft, axis=1)[:, :tau_max + 1]
    sq = np.concatenate([np.zeros((frames.shape[0], 1)), np.cumsum(frames ** 2, axis=1)], axis=1)
    taus = np.arange(tau_max + 1)
    e0 = sq[:, w:w + 1]
    etau = sq[:, taus + w] - sq[:, taus]
    d = np.maximum(e0 + etau - 2 * r, 0.0)
    cum = np.cumsum(d[:, 1:], axis=1)
    out = np.ones_like(d)
    # silent comparison spans carry no periodicity evidence: leave them at 1
    out[:, 1:] = np.where(cum > 1e-9, d[:, 1:] * taus[1:] / np.maximum(cum, 1e-12), 1.0)
    return out, etau / np.maximum(e0, 1e-12)


def estimate_f0(clip: AudioClip, frame_rate: float | None = None, threshold: float = 0.15,
                min_periodicity: float = 0.5, min_rms_db: float = -50.0, max_energy_ratio: float = 1.5,
                fmin: float = F0_MIN, fmax: float = F0_MAX) -> PitchContour:
    """Frame-wise F0 with a voicing decision.

    A frame is voiced when its periodicity ``1 - d'(tau*)`` exceeds
    ``min_periodicity``, its RMS exceeds ``min_rms_db`` dBFS and the two spans
    the difference function compares differ in energy by less than
    ``max_energy_ratio``. Voiced runs are median-filtered (width 5).
    """
    sr = clip.sample_rate
    hop = HOP if frame_rate is None else int(round(sr / frame_rate))
    x = clip.samples.astype(np.float64)
    if x.size < N_FFT:
        x = np.pad(x, (0, N_FFT - x.size))
    n_frames = 1 + (x.size - N_FFT) // hop
    frames = np.lib.stride_tricks.sliding_window_view(x, N_FFT)[::hop][:n_frames]
    tau_min = max(2, int(np.floor(sr / fmax)))
    tau_max = int(np.ceil(sr / fmin))
    w = N_FFT - tau_max - 1
    dn, ratio = _cmndf(frames, w, tau_max + 1)

    search = dn[:, tau_min:tau_max + 1]
    below = search < threshold
    # first dip under threshold, then walk to its local minimum; else global minimum
    first = np.where(below.any(axis=1), below.argmax(axis=1), search.argmin(axis=1))
    idx = first.copy()
    for i in range(len(idx)):
        j = idx[i]
        if below[i].any():
            while j + 1 < search.shape[1] and search[i, j + 1] < search[i, j]:
                j += 1
        idx[i] = j
    tau = idx + tau_min
    rows = np.arange(len(tau))
    best = dn[rows, tau]
    # parabolic interpolation on the difference curve
    left = dn[rows, tau - 1]
    right = dn[rows, np.minimum(tau + 1, dn.shape[1] - 1)]
    denom = left - 2 * best + right
    shift = np.where(np.abs(denom) > 1e-12, 0.5 * (left - right) / np.where(denom == 0, 1, denom), 0.0)
    shift = np.clip(shift, -1.0, 1.0)
    f0 = sr / (tau + shift)

    periodicity = 1.0 - best
    # loudness of the span the difference function actually compares
    rms_db = 20 * np.log10(np.sqrt(np.mean(frames[:, :w + tau_max] ** 2, axis=1)) + 1e-12)
    # a frame straddling an onset or offset compares tone against silence; its lag is unreliable
    steady = np.abs(np.log(np.maximum(ratio[rows, tau], 1e-12))) < np.log(max_energy_ratio)
    voiced = ((periodicity > min_periodicity) & (rms_db > min_rms_db) & steady
              & (f0 >= fmin) & (f0 <= fmax))

    f0 = np.where(voiced, f0, 0.0)
    f0 = _median_over_runs(f0, voiced, 5)
    return PitchContour(f0, voiced, sr / hop)


def _median_over_runs(f0: np.ndarray, voiced: np.ndarray, width: int) -> np.ndarray:
    out = f0.copy()
    edges = np.flatnonzero(np.diff(np.concatenate([[0], voiced.astype(int), [0]])))
    for a, b in zip(edges[::2], edges[1::2]):
        seg = np.pad(f0[a:b], width // 2, mode="edge")
        out[a:b] = np.median(np.lib.stride_tricks.sliding_window_view(seg, width), axis=1)
    return out


def _blocks(n: int, d: int):
    for start in range(0, n, d):
        yield start, min(start + d, n)


def voiced_mask(contour: PitchContour, downsample: int) -> np.ndarray:
    """Block is voiced iff strictly more than ``D/2`` of its D source frames are voiced."""
    if downsample < 1:
        raise ValueError("downsample must be >= 1")
    v = contour.voiced
    return np.array([v[a:b].sum() > downsample / 2 for a, b in _blocks(v.size, downsample)], dtype=bool)


def quantize_contour(contour: PitchContour, downsample: int) -> np.ndarray:
    """Per-block MIDI tokens: ``round(midi(median voiced F0))`` clamped to [36, 96], REST=0."""
    mask = voiced_mask(contour, downsample)
    tokens = np.zeros(mask.size, dtype=np.int64)
    for i, (a, b) in enumerate(_blocks(contour.f0_hz.size, downsample)):
        if mask[i]:
            f = contour.f0_hz[a:b][contour.voiced[a:b]]
            m = hz_to_midi(np.median(f))
            tokens[i] = int(np.clip(np.floor(m + 0.5), MIDI_LO, MIDI_HI))
    return tokens


# ---------------------------------------------------------------- F0C1 binary

F0_MAGIC = b"F0C1"


def save_contour(path, contour: PitchContour):
    t = len(contour)
    with open(path, "wb") as f:
        f.write(F0_MAGIC + struct.pack("<I", t))
        f.write(np.ascontiguousarray(contour.f0_hz, dtype="<f4").tobytes())
        f.write(contour.voiced.astype(np.uint8).tobytes())


def load_contour(path, frame_rate: float = SAMPLE_RATE / HOP) -> PitchContour:
    raw = Path(path).read_bytes()
    if raw[:4] != F0_MAGIC:
        raise UnsupportedEncoding(f"{path}: bad magic {raw[:4]!r}")
    (t,) = struct.unpack("<I", raw[4:8])
    f0 = np.frombuffer(raw[8:8 + 4 * t], dtype="<f4").astype(np.float64)
    voiced = np.frombuffer(raw[8 + 4 * t:8 + 5 * t], dtype=np.uint8).astype(bool)
    return PitchContour(np.where(voiced, f0, 0.0), voiced, frame_rate)
