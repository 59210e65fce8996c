"""Audio I/O, log-mel analysis, silence chunking and Griffin-Lim mel inversion.

Framing is left-aligned (no centre padding): frame ``t`` covers samples
``[t * HOP, t * HOP + N_FFT)``, so a clip of ``n`` samples has
``1 + (n - N_FFT) // HOP`` frames.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import optimize, signal
from scipy.io import wavfile

log = logging.getLogger(__name__)

SAMPLE_RATE = 24000
N_FFT = 1024
HOP = 120
N_MELS = 80
FMIN, FMAX = 0.0, 12000.0
DB_MIN, DB_MAX = -100.0, 0.0
AMP_FLOOR = 1e-5
FRAME_RATE = SAMPLE_RATE / HOP  # 200 frames/s


class UnreadableFile(OSError):
    pass


class UnsupportedEncoding(ValueError):
    pass


class TooShort(ValueError):
    pass


class NoValidSplit(RuntimeError):
    pass


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    oversized: bool = False   # set by chunk_audio when no silence allowed a split
    undersized: bool = False  # set by chunk_audio for a chunk shorter than min_len

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("AudioClip needs a non-empty mono sample array")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if np.abs(self.samples).max() > 1.0 + 1e-6:
            raise ValueError("samples must lie in [-1, 1]")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class MelSpectrogram:
    frames: np.ndarray  # (T, 80), values in [0, 1]
    frame_hop: int = HOP
    frame_rate: float = FRAME_RATE
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2 or self.frames.shape[1] != N_MELS or self.frames.shape[0] < 1:
            raise ValueError(f"mel must be (T>=1, {N_MELS}), got {self.frames.shape}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


# ---------------------------------------------------------------- I/O

def load_audio(path, target_rate: int = SAMPLE_RATE) -> AudioClip:
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError as e:
        raise UnreadableFile(f"{path}: no such file") from e
    except ValueError as e:
        raise UnreadableFile(f"{path}: {e}") from e
    if data.dtype == np.int16:
        x = data.astype(np.float32) / 32768.0
    elif data.dtype == np.float32:
        x = data
    else:
        raise UnsupportedEncoding(f"{path}: {data.dtype} (need PCM16 or float32)")
    if x.ndim == 2:
        x = x.mean(axis=1)
    x = resample(x, rate, target_rate)
    peak = np.abs(x).max() if x.size else 0.0
    if peak > 1.0:
        x = x / peak
    return AudioClip(x.astype(np.float32), target_rate)


def save_audio(path, clip: AudioClip, encoding: str = "pcm16"):
    x = np.clip(clip.samples, -1.0, 1.0)
    if encoding == "pcm16":
        wavfile.write(path, clip.sample_rate, np.round(x * 32767).astype(np.int16))
    elif encoding == "float32":
        wavfile.write(path, clip.sample_rate, x.astype(np.float32))
    else:
        raise UnsupportedEncoding(encoding)


def resample(x: np.ndarray, rate: int, target_rate: int) -> np.ndarray:
    """Windowed-sinc polyphase resampling; identity when the rates match."""
    if rate == target_rate:
        return np.asarray(x, dtype=np.float32)
    ratio = Fraction(target_rate, rate)
    return signal.resample_poly(x, ratio.numerator, ratio.denominator).astype(np.float32)


# ---------------------------------------------------------------- analysis

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


_FB_CACHE: dict = {}


def mel_filterbank(sr: int = SAMPLE_RATE, n_fft: int = N_FFT, n_mels: int = N_MELS,
                   fmin: float = FMIN, fmax: float = FMAX) -> np.ndarray:
    """HTK-style triangular filters, shape (n_mels, n_fft // 2 + 1), unit peak."""
    key = (sr, n_fft, n_mels, fmin, fmax)
    if key not in _FB_CACHE:
        freqs = np.fft.rfftfreq(n_fft, 1.0 / sr)
        edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
        lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
        up = (freqs[None, :] - lo) / (mid - lo)
        down = (hi - freqs[None, :]) / (hi - mid)
        _FB_CACHE[key] = np.maximum(0.0, np.minimum(up, down))
    return _FB_CACHE[key]


def n_frames_for(n_samples: int, n_fft: int = N_FFT, hop: int = HOP) -> int:
    return 1 + (n_samples - n_fft) // hop


def frame_signal(x: np.ndarray, n_fft: int = N_FFT, hop: int = HOP) -> np.ndarray:
    n = n_frames_for(len(x), n_fft, hop)
    return np.lib.stride_tricks.sliding_window_view(x, n_fft)[::hop][:n]


def stft(x: np.ndarray, n_fft: int = N_FFT, hop: int = HOP) -> np.ndarray:
    """Complex STFT (T, n_fft//2+1) with a periodic Hann window, left-aligned frames."""
    win = signal.get_window("hann", n_fft)
    return np.fft.rfft(frame_signal(np.asarray(x, dtype=np.float64), n_fft, hop) * win, axis=1)


def istft(spec: np.ndarray, n_fft: int = N_FFT, hop: int = HOP) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`; length ``(T - 1) * hop + n_fft``."""
    win = signal.get_window("hann", n_fft)
    frames = np.fft.irfft(spec, n=n_fft, axis=1) * win
    T = frames.shape[0]
    n = (T - 1) * hop + n_fft
    m = -(-n_fft // hop)
    # split every frame into hop-sized slices; slice k of frame t lands in block t + k
    pad = m * hop - n_fft
    sl = np.pad(frames, ((0, 0), (0, pad))).reshape(T, m, hop)
    wsl = np.pad(win * win, (0, pad)).reshape(m, hop)
    out = np.zeros((T + m - 1, hop))
    norm = np.zeros((T + m - 1, hop))
    for k in range(m):
        out[k:k + T] += sl[:, k]
        norm[k:k + T] += wsl[k]
    out, norm = out.ravel()[:n], norm.ravel()[:n]
    # the first and last few hundred samples are covered by window tails only; a
    # relative floor keeps phase-inconsistent edges from being amplified
    return out / np.maximum(norm, 0.1 * norm.max())


def amp_to_norm(amp: np.ndarray) -> np.ndarray:
    db = 20.0 * np.log10(amp + AMP_FLOOR)
    return (np.clip(db, DB_MIN, DB_MAX) - DB_MIN) / (DB_MAX - DB_MIN)


def norm_to_db(norm: np.ndarray) -> np.ndarray:
    return np.asarray(norm, dtype=np.float64) * (DB_MAX - DB_MIN) + DB_MIN


def db_to_norm(db: np.ndarray) -> np.ndarray:
    return (np.clip(db, DB_MIN, DB_MAX) - DB_MIN) / (DB_MAX - DB_MIN)


def window_gain(n_fft: int = N_FFT) -> float:
    return float(signal.get_window("hann", n_fft).sum())


def mel_magnitudes(x: np.ndarray) -> np.ndarray:
    """Linear-amplitude mel energies (T, 80) of a 24 kHz signal.

    STFT magnitudes are divided by the window sum, so a unit sinusoid peaks at 0.5.
    """
    mag = np.abs(stft(x)) / window_gain()
    return mag @ mel_filterbank().T


def melspectrogram(clip: AudioClip) -> MelSpectrogram:
    if clip.sample_rate != SAMPLE_RATE:
        raise ValueError(f"expected {SAMPLE_RATE} Hz audio, got {clip.sample_rate}")
    if clip.samples.size < N_FFT:
        raise TooShort(f"need at least {N_FFT} samples, got {clip.samples.size}")
    return MelSpectrogram(amp_to_norm(mel_magnitudes(clip.samples)))


# ---------------------------------------------------------------- chunking

def frame_rms_db(x: np.ndarray, win: int, hop: int) -> np.ndarray:
    if len(x) < win:
        return np.array([20 * np.log10(np.sqrt(np.mean(x ** 2)) + 1e-10)])
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop]
    return 20 * np.log10(np.sqrt(np.mean(frames.astype(np.float64) ** 2, axis=1)) + 1e-10)


def chunk_audio(clip: AudioClip, min_len: float = 2.5, max_len: float = 12.0,
                silence_db: float = -40.0, min_silence: float = 0.3,
                rms_window: float = 0.02) -> list[AudioClip]:
    """Split a long recording at silent gaps.

    Silent gaps of at least ``min_silence`` seconds are removed and become
    candidate cut points; pieces are then greedily merged (silences included)
    so each chunk lands in ``[min_len, max_len]`` where possible. A voiced span
    longer than ``max_len`` is emitted whole with ``oversized`` set, and a
    short remainder is emitted with ``undersized`` set.
    """
    if not min_len < max_len:
        raise ValueError("min_len must be smaller than max_len")
    sr = clip.sample_rate
    x = clip.samples
    win = max(1, int(rms_window * sr))
    quiet = frame_rms_db(x, win, win) < silence_db
    # silent sample runs, in samples; a partial tail frame counts as not quiet
    runs = []
    start = None
    for i, q in enumerate(quiet):
        if q and start is None:
            start = i
        elif not q and start is not None:
            runs.append((start * win, i * win))
            start = None
    if start is not None:
        runs.append((start * win, len(x)))
    gaps = [(a, b) for a, b in runs if (b - a) >= min_silence * sr]
    # a quiet RMS frame can still hold a few loud samples at its edge; keep those
    loud = np.abs(x) >= 10.0 ** (silence_db / 20.0)
    trimmed = []
    for a, b in gaps:
        head = np.flatnonzero(loud[a:min(a + win, b)])
        tail = np.flatnonzero(loud[max(b - win, a):b])
        a2 = a + int(head[-1]) + 1 if head.size else a
        b2 = max(b - win, a) + int(tail[0]) if tail.size else b
        if b2 > a2:
            trimmed.append((a2, b2))
    gaps = trimmed

    # voiced pieces between removed gaps
    pieces = []
    pos = 0
    for a, b in gaps:
        if a > pos:
            pieces.append((pos, a))
        pos = b
    if pos < len(x):
        pieces.append((pos, len(x)))
    if not pieces:
        return [AudioClip(x.copy(), sr, undersized=len(x) < min_len * sr)]

    spans = []
    cur_start, cur_end = pieces[0]
    for a, b in pieces[1:]:
        if (cur_end - cur_start) < min_len * sr and (b - cur_start) <= max_len * sr:
            cur_end = b
        else:
            spans.append((cur_start, cur_end))
            cur_start, cur_end = a, b
    spans.append((cur_start, cur_end))
    # fold a short remainder into its predecessor when that still fits
    if len(spans) > 1 and (spans[-1][1] - spans[-1][0]) < min_len * sr \
            and (spans[-1][1] - spans[-2][0]) <= max_len * sr:
        spans[-2:] = [(spans[-2][0], spans[-1][1])]
    return [_make_chunk(x, a, b, sr, min_len, max_len) for a, b in spans]


def _make_chunk(x, a, b, sr, min_len, max_len) -> AudioClip:
    c = AudioClip(x[a:b].copy(), sr)
    if (b - a) > max_len * sr:
        c.oversized = True
        log.warning("no silence allowed a split: emitting %.2f s chunk (> %.1f s)", (b - a) / sr, max_len)
    if (b - a) < min_len * sr:
        c.undersized = True
    return c


# ---------------------------------------------------------------- inversion

def mel_to_linear(mel_amp: np.ndarray, max_iter: int = 100) -> np.ndarray:
    """Non-negative least-squares solve of ``fb @ S = mel`` for all frames at once."""
    fb = mel_filterbank()
    y = np.asarray(mel_amp, dtype=np.float64).T  # (80, T)
    x0 = np.maximum(np.linalg.pinv(fb) @ y, 0.0)
    shape = x0.shape

    def fun(flat):
        s = flat.reshape(shape)
        r = fb @ s - y
        return 0.5 * np.sum(r * r), (fb.T @ r).ravel()

    res = optimize.minimize(fun, x0.ravel(), jac=True, method="L-BFGS-B",
                            bounds=optimize.Bounds(0.0, np.inf), options={"maxiter": max_iter})
    return res.x.reshape(shape).T  # (T, 513)


def griffin_lim(mag: np.ndarray, iterations: int = 60, momentum: float = 0.99,
                seed: int = 0) -> np.ndarray:
    """Fast Griffin-Lim (with momentum) from a (T, bins) magnitude."""
    rng = np.random.default_rng(seed)
    angles = np.exp(2j * np.pi * rng.random(mag.shape))
    prev = np.zeros_like(angles)
    x = istft(mag * angles)
    for _ in range(iterations):
        rebuilt = stft(x)
        tmp = rebuilt - (momentum / (1 + momentum)) * prev
        angles = tmp / np.maximum(np.abs(tmp), 1e-16)
        prev = rebuilt
        x = istft(mag * angles)
    return x


def invert_mel(mel: MelSpectrogram, iterations: int = 60, seed: int = 0) -> AudioClip:
    """Mel -> waveform: undo normalisation, NNLS to linear magnitude, Griffin-Lim phase.

    Output length is ``(T - 1) * HOP + N_FFT`` samples (the exact span of the frames).
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    amp = 10.0 ** (norm_to_db(mel.frames) / 20.0) - AMP_FLOOR
    amp = np.maximum(amp, 0.0)
    if amp.max() <= 0:
        return AudioClip(np.zeros((mel.n_frames - 1) * HOP + N_FFT, dtype=np.float32))
    lin = mel_to_linear(amp) * window_gain()
    x = griffin_lim(lin, iterations=iterations, seed=seed)
    peak = np.abs(x).max()
    if peak > 1.0:
        x = x / peak
    return AudioClip(x.astype(np.float32))


# ---------------------------------------------------------------- MELS binary

MEL_MAGIC = b"MELS"
MEL_VERSION = 1


def save_mel(path, mel: MelSpectrogram):
    data = np.ascontiguousarray(mel.frames, dtype="<f4")
    with open(path, "wb") as f:
        f.write(MEL_MAGIC + struct.pack("<III", MEL_VERSION, data.shape[0], N_MELS))
        f.write(data.tobytes())


def load_mel(path) -> MelSpectrogram:
    raw = Path(path).read_bytes()
    if raw[:4] != MEL_MAGIC:
        raise UnsupportedEncoding(f"{path}: bad magic {raw[:4]!r}")
    version, t, bins = struct.unpack("<III", raw[4:16])
    if version != MEL_VERSION or bins != N_MELS:
        raise UnsupportedEncoding(f"{path}: version {version}, bins {bins}")
    data = np.frombuffer(raw[16:16 + 4 * t * bins], dtype="<f4").reshape(t, bins)
    return MelSpectrogram(data.astype(np.float32))
