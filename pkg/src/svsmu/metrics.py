"""Objective evaluation: mel-cepstral distortion, F0 RMSE and phoneme error rate
within syllables, plus JSON/CSV report writers."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.fft import dct

from .dsp import N_FFT, AudioClip, mel_magnitudes
from .pitch import PitchContour
from .score import FRAME_RATE_DS, EmptyScore, PhonemeInventory, Score, round_half_away

N_CEPS = 13
MCD_CONST = 10.0 * math.sqrt(2.0) / math.log(10.0)
LOG_FLOOR = 1e-5


class EmptyInput(ValueError):
    pass


class NoVoicedOverlap(ValueError):
    pass


def mel_cepstrum(clip: AudioClip, n_ceps: int = N_CEPS) -> np.ndarray:
    """Per-frame coefficients 1..n_ceps of the orthonormal DCT-II of the natural-log mel."""
    if clip.samples.size < N_FFT:
        raise EmptyInput("clip shorter than one analysis frame")
    mags = mel_magnitudes(clip.samples)
    c = dct(np.log(mags + LOG_FLOOR), type=2, norm="ortho", axis=1)
    return c[:, 1:n_ceps + 1]


def mcd_from_cepstra(ref: np.ndarray, syn: np.ndarray) -> float:
    """Frame-averaged ``(10 sqrt(2) / ln 10) * ||c - c'||`` over the shorter sequence."""
    ref, syn = np.atleast_2d(ref), np.atleast_2d(syn)
    n = min(len(ref), len(syn))
    if n == 0:
        raise EmptyInput("need at least one frame in each sequence")
    diff = ref[:n] - syn[:n]
    return float(MCD_CONST * np.mean(np.sqrt(np.sum(diff ** 2, axis=1))))


def mcd(reference: AudioClip, synthesized: AudioClip) -> float:
    """Mel-cepstral distortion in dB between two time-aligned clips (no DTW)."""
    return mcd_from_cepstra(mel_cepstrum(reference), mel_cepstrum(synthesized))


def f0_rmse(ref: PitchContour, syn: PitchContour) -> dict[str, float]:
    """RMSE over frames voiced in both contours, in Hz and cents."""
    if not math.isclose(ref.frame_rate, syn.frame_rate):
        raise ValueError(f"frame rates differ: {ref.frame_rate} vs {syn.frame_rate}")
    n = min(len(ref), len(syn))
    both = ref.voiced[:n] & syn.voiced[:n]
    if not both.any():
        raise NoVoicedOverlap("no frame is voiced in both contours")
    a, b = ref.f0_hz[:n][both], syn.f0_hz[:n][both]
    hz = float(np.sqrt(np.mean((a - b) ** 2)))
    cents = float(np.sqrt(np.mean((1200.0 * np.log2(b / a)) ** 2)))
    union = (ref.voiced[:n] | syn.voiced[:n]).sum()
    return {"hz": hz, "cents": cents, "voiced_overlap_ratio": float(both.sum() / union)}


def levenshtein(a: Sequence, b: Sequence) -> int:
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def note_windows(score: Score, frame_rate_ds: float = FRAME_RATE_DS) -> list[tuple[int, int]]:
    """Half-open frame windows ``[start, end)`` of each note on the downsampled clock."""
    return [(round_half_away(n.onset * frame_rate_ds), round_half_away((n.onset + n.duration) * frame_rate_ds))
            for n in score.notes]


def syllable_errors(alignment: Sequence[dict], score: Score, inventory: PhonemeInventory | None = None,
                    frame_rate_ds: float = FRAME_RATE_DS) -> list[tuple[int, int]]:
    """Per note: (edit distance, syllable length)."""
    if not score.notes:
        raise EmptyScore("score has no notes")

    def sym(p):
        return inventory.symbols[p] if inventory is not None and not isinstance(p, str) else p

    mids = [((s["start_frame"] + s["end_frame"]) / 2.0, sym(s["phoneme"])) for s in alignment]
    out = []
    for note, (a, b) in zip(score.notes, note_windows(score, frame_rate_ds)):
        pred = [p for m, p in sorted(mids, key=lambda x: x[0]) if a <= m < b]
        collapsed = [p for i, p in enumerate(pred) if i == 0 or p != pred[i - 1]]
        out.append((levenshtein(collapsed, list(note.phonemes)), len(note.phonemes)))
    return out


def pers(alignment: Sequence[dict], score: Score, inventory: PhonemeInventory | None = None,
         frame_rate_ds: float = FRAME_RATE_DS) -> float:
    """Phoneme error rate within syllables, in percent.

    Segments are assigned to the note whose window holds their midpoint.
    ``alignment`` phonemes may be symbols or ids (ids need ``inventory``).
    """
    errs = syllable_errors(alignment, score, inventory, frame_rate_ds)
    return 100.0 * sum(d for d, _ in errs) / sum(n for _, n in errs)


@dataclass
class ClipMetrics:
    id: str
    mcd_db: float | None = None
    f0_rmse_hz: float | None = None
    f0_rmse_cents: float | None = None
    pers_percent: float | None = None
    voiced_overlap_ratio: float | None = None


FIELDS = ("mcd_db", "f0_rmse_hz", "f0_rmse_cents", "pers_percent", "voiced_overlap_ratio")


@dataclass
class EvalReport:
    clips: list[ClipMetrics] = field(default_factory=list)

    def add(self, m: ClipMetrics):
        for k in FIELDS:
            v = getattr(m, k)
            if v is not None and not v >= 0:
                raise ValueError(f"{m.id}: {k} must be non-negative, got {v}")
        self.clips.append(m)

    def aggregate(self) -> dict[str, float | None]:
        """Mean of each field over the clips that report it."""
        out = {}
        for k in FIELDS:
            vals = [getattr(c, k) for c in self.clips if getattr(c, k) is not None]
            out[k] = float(np.mean(vals)) if vals else None
        out["n_clips"] = len(self.clips)
        return out

    def to_json(self) -> dict:
        return {"clips": [asdict(c) for c in self.clips], "aggregate": self.aggregate()}

    def save_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2)

    def save_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(("id",) + FIELDS)
            for c in self.clips:
                w.writerow([c.id] + ["" if getattr(c, k) is None else f"{getattr(c, k):.6g}" for k in FIELDS])
            agg = self.aggregate()
            w.writerow(["mean"] + ["" if agg[k] is None else f"{agg[k]:.6g}" for k in FIELDS])
