"""Synthetic singing corpus with exact scores.

Vowels are band-limited sawtooth-like harmonic series shaped by two formant
resonances; consonants are filtered noise bursts. Audio is rendered straight
from the expanded frame labels, so each clip's score is exact by construction.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .dsp import SAMPLE_RATE, AudioClip, save_audio
from .pitch import midi_to_hz
from .score import (FRAME_RATE_DS, Entry, FrameLabels, Note, PhonemeInventory, Score,
                    expand_score, targets_from_score, write_manifest)

VOWEL_FORMANTS = {
    "a": (800.0, 1200.0),
    "e": (400.0, 2000.0),
    "i": (300.0, 2500.0),
    "o": (450.0, 800.0),
    "u": (325.0, 700.0),
}
CONSONANT_BANDS = {
    "s": (4500.0, 9000.0),
    "k": (1500.0, 3000.0),
    "t": (2500.0, 7000.0),
}
ALL_PHONEMES = tuple(VOWEL_FORMANTS) + tuple(CONSONANT_BANDS)
SAMPLES_PER_FRAME = int(SAMPLE_RATE / FRAME_RATE_DS)


@dataclass
class CorpusSpec:
    n_clips: int = 8
    phonemes: tuple[str, ...] = ("a", "e", "i", "o", "u")
    tempo: float = 120.0
    seed: int = 0
    clip_seconds: tuple[float, float] = (2.5, 4.0)
    midi_range: tuple[int, int] = (57, 72)
    consonant_prob: float = 0.5

    def __post_init__(self):
        self.phonemes = tuple(self.phonemes)
        bad = set(self.phonemes) - set(ALL_PHONEMES)
        if bad:
            raise ValueError(f"unsupported synthetic phonemes {sorted(bad)}")
        if not any(p in VOWEL_FORMANTS for p in self.phonemes):
            raise ValueError("phoneme subset needs at least one vowel")
        lo, hi = self.clip_seconds
        if not (2.5 <= lo <= hi <= 12.0):
            raise ValueError("clip_seconds must lie within [2.5, 12]")


@dataclass
class SynthItem:
    id: str
    clip: AudioClip
    score: Score
    targets: np.ndarray
    labels: FrameLabels = field(repr=False, default=None)

    def entry(self) -> Entry:
        return Entry(self.id, Path(f"{self.id}.wav"), self.targets, self.score, self.clip)


def inventory_for(phonemes) -> PhonemeInventory:
    return PhonemeInventory.from_symbols(list(phonemes), [p for p in phonemes if p in VOWEL_FORMANTS])


def _formant_gain(freqs: np.ndarray, formants, bw: float = 120.0) -> np.ndarray:
    g = np.full_like(freqs, 0.03)
    for k, f in enumerate(formants):
        g += (1.0 if k == 0 else 0.6) / (1.0 + ((freqs - f) / bw) ** 2)
    return g


def render_vowel(f0: float, vowel: str, n: int, phase0: float = 0.0) -> tuple[np.ndarray, float]:
    """Harmonic series up to 11 kHz with 1/h roll-off and formant shaping.

    Returns the signal and the phase (in cycles) reached at sample ``n``.
    """
    t = np.arange(n) / SAMPLE_RATE
    n_h = int(11000.0 // f0)
    h = np.arange(1, n_h + 1)
    amps = _formant_gain(h * f0, VOWEL_FORMANTS[vowel]) / h
    amps /= amps.sum()
    cycles = phase0 + f0 * t
    x = np.sin(2 * np.pi * np.outer(cycles, h)) @ amps
    return x, phase0 + f0 * n / SAMPLE_RATE


def render_consonant(cons: str, n: int, rng: np.random.Generator) -> np.ndarray:
    lo, hi = CONSONANT_BANDS[cons]
    sos = signal.butter(4, [lo, hi], btype="band", fs=SAMPLE_RATE, output="sos")
    noise = signal.sosfilt(sos, rng.standard_normal(n + 256))[256:]
    return noise / (np.abs(noise).max() + 1e-9)


def render(labels: FrameLabels, score: Score, inventory: PhonemeInventory, rng: np.random.Generator,
           tail_frames: int = 0, level: float = 0.5) -> np.ndarray:
    n_frames = len(labels) + tail_frames
    out = np.zeros(n_frames * SAMPLES_PER_FRAME)
    ph = labels.phoneme_ids
    for i, note in enumerate(score.notes):
        frames = np.flatnonzero(labels.note_index == i)
        f0 = float(midi_to_hz(note.midi))
        phase = 0.0
        # render maximal runs of the same phoneme inside the note
        run_start = frames[0]
        for j in range(len(frames)):
            f = frames[j]
            last = j == len(frames) - 1 or ph[frames[j + 1]] != ph[f] or labels.slots[frames[j + 1]] != labels.slots[f]
            if not last:
                continue
            sym = inventory.symbols[ph[f]]
            a, b = run_start * SAMPLES_PER_FRAME, (f + 1) * SAMPLES_PER_FRAME
            if sym in VOWEL_FORMANTS:
                seg, phase = render_vowel(f0, sym, b - a, phase)
                seg = seg * level
            else:
                seg = render_consonant(sym, b - a, rng) * (0.3 * level)
            out[a:b] = seg
            if j + 1 < len(frames):
                run_start = frames[j + 1]
        # 5 ms fades at note edges avoid clicks
        a, b = frames[0] * SAMPLES_PER_FRAME, (frames[-1] + 1) * SAMPLES_PER_FRAME
        fade = min(120, (b - a) // 2)
        ramp = np.linspace(0.0, 1.0, fade)
        out[a:a + fade] *= ramp
        out[b - fade:b] *= ramp[::-1]
    return out


def random_score(rng: np.random.Generator, spec: CorpusSpec, inventory: PhonemeInventory) -> Score:
    vowels = [p for p in spec.phonemes if p in VOWEL_FORMANTS]
    cons = [p for p in spec.phonemes if p in CONSONANT_BANDS]
    beat = 60.0 / spec.tempo
    target = rng.uniform(*spec.clip_seconds)
    t = 0.1  # leading silence
    notes = []
    midi = int(rng.integers(spec.midi_range[0], spec.midi_range[1] + 1))
    while True:
        dur = float(rng.choice([0.5, 1.0, 1.0, 1.5, 2.0])) * beat
        dur = round(dur * FRAME_RATE_DS) / FRAME_RATE_DS
        if t + dur + 0.2 > target:
            break
        syl = []
        if cons and rng.random() < spec.consonant_prob:
            syl.append(str(rng.choice(cons)))
        # a different vowel from the previous note keeps neighbouring syllables distinct
        fresh = [v for v in vowels if not notes or v not in notes[-1].phonemes] or vowels
        syl.append(str(rng.choice(fresh)))
        if cons and rng.random() < spec.consonant_prob / 2:
            syl.append(str(rng.choice(cons)))
        notes.append(Note(round(t, 2), dur, midi, tuple(syl)))
        t += dur
        if rng.random() < 0.3:
            t += float(rng.choice([0.1, 0.2]))
        t = round(t, 2)
        step = int(rng.choice([-4, -3, -2, -1, 1, 2, 3, 4]))
        midi = int(np.clip(midi + step, spec.midi_range[0], spec.midi_range[1]))
    if not notes:
        raise RuntimeError("clip_seconds too short for a single note")
    return Score(notes).validate(inventory)


def synth_corpus(spec: CorpusSpec) -> tuple[list[SynthItem], PhonemeInventory]:
    """Deterministic synthetic dataset; every clip lasts ``clip_seconds`` (within [2.5, 12] s)."""
    inventory = inventory_for(spec.phonemes)
    rng = np.random.default_rng(spec.seed)
    items = []
    for k in range(spec.n_clips):
        score = random_score(rng, spec, inventory)
        labels = expand_score(score, inventory)
        # a short silent tail after the last note, never below the minimum clip length
        total = max(len(labels) + int(rng.integers(10, 21)), int(np.ceil(spec.clip_seconds[0] * FRAME_RATE_DS)))
        x = render(labels, score, inventory, rng, tail_frames=total - len(labels))
        items.append(SynthItem(f"clip{k:03d}", AudioClip(x.astype(np.float32)), score,
                               targets_from_score(score, inventory), labels))
    return items, inventory


def write_corpus(items: list[SynthItem], inventory: PhonemeInventory, out_dir) -> Path:
    """Write WAVs, score JSONs, the inventory and ``manifest.jsonl``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    inventory.save(out / "inventory.txt")
    rows = []
    for it in items:
        save_audio(out / f"{it.id}.wav", it.clip, encoding="float32")
        it.score.save(out / f"{it.id}.score.json")
        rows.append({"id": it.id, "audio": f"{it.id}.wav",
                     "phonemes": " ".join(inventory.symbols[i] for i in it.targets),
                     "score": f"{it.id}.score.json"})
    write_manifest(out / "manifest.jsonl", rows)
    (out / "corpus.json").write_text(json.dumps({"n_clips": len(items)}))
    return out / "manifest.jsonl"
