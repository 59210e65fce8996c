"""Phoneme inventory, scores, frame-level label expansion and dataset manifests."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .pitch import MIDI_HI, MIDI_LO, REST

BLANK = 0
BLANK_SYMBOL = "<blank>"
FRAME_RATE_DS = 100.0  # 10 ms label frames
_VOWEL_CHARS = set("aeiouyAEIOUYæɑɒɔəɚɛɜɝɪʊʌøœɯɤɨʉɐɘɵ")


class InvalidSyllable(ValueError):
    pass


class NoteTooShort(ValueError):
    def __init__(self, index: int, frames: int, needed: int):
        super().__init__(f"note {index}: {frames} frames cannot hold {needed} phonemes")
        self.index = index


class EmptyScore(ValueError):
    pass


class SchemaViolation(ValueError):
    def __init__(self, msg: str, line: int | None = None):
        super().__init__(f"line {line}: {msg}" if line is not None else msg)
        self.line = line


class MissingFile(FileNotFoundError):
    pass


def round_half_away(x: float) -> int:
    # tiny nudge absorbs binary noise such as 0.015 * 100 = 1.4999999999999998
    return int(math.copysign(math.floor(abs(x) + 0.5 + 1e-9), x))


@dataclass(frozen=True)
class PhonemeInventory:
    symbols: tuple[str, ...]
    vowels: frozenset[str]

    def __post_init__(self):
        if not self.symbols or self.symbols[0] != BLANK_SYMBOL:
            raise SchemaViolation(f"inventory must start with {BLANK_SYMBOL}")
        if len(set(self.symbols)) != len(self.symbols):
            raise SchemaViolation("duplicate phoneme symbols")

    @classmethod
    def from_symbols(cls, symbols: Sequence[str], vowels: Sequence[str] | None = None):
        symbols = tuple(s for s in symbols if s != BLANK_SYMBOL)
        if vowels is None:
            vowels = [s for s in symbols if s[0] in _VOWEL_CHARS]
        return cls((BLANK_SYMBOL, *symbols), frozenset(vowels))

    @classmethod
    def load(cls, path) -> "PhonemeInventory":
        """Plain text, one ``symbol [vowel|consonant]`` per line, ``#`` comments."""
        syms, vowels = [], []
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if not syms and parts[0] != BLANK_SYMBOL:
                raise SchemaViolation(f"first entry must be {BLANK_SYMBOL}", lineno)
            sym = parts[0]
            if len(parts) > 1:
                if parts[1] not in ("vowel", "consonant"):
                    raise SchemaViolation(f"unknown phoneme class {parts[1]!r}", lineno)
                if parts[1] == "vowel":
                    vowels.append(sym)
            elif sym != BLANK_SYMBOL and sym[0] in _VOWEL_CHARS:
                vowels.append(sym)
            syms.append(sym)
        return cls(tuple(syms), frozenset(vowels))

    def save(self, path):
        lines = ["# phoneme inventory: symbol class"]
        lines.append(BLANK_SYMBOL)
        for s in self.symbols[1:]:
            lines.append(f"{s} {'vowel' if s in self.vowels else 'consonant'}")
        Path(path).write_text("\n".join(lines) + "\n")

    def __len__(self):
        return len(self.symbols)

    def index(self, symbol: str) -> int:
        try:
            return self._lookup[symbol]
        except KeyError:
            raise SchemaViolation(f"phoneme {symbol!r} not in inventory") from None

    @property
    def _lookup(self) -> dict[str, int]:
        cache = self.__dict__.get("_lk")
        if cache is None:
            cache = {s: i for i, s in enumerate(self.symbols)}
            object.__setattr__(self, "_lk", cache)
        return cache

    def ids(self, symbols: Sequence[str]) -> list[int]:
        return [self.index(s) for s in symbols]

    def is_vowel(self, symbol: str) -> bool:
        return symbol in self.vowels


@dataclass(frozen=True)
class Note:
    onset: float
    duration: float
    midi: int
    phonemes: tuple[str, ...]


@dataclass
class Score:
    notes: list[Note] = field(default_factory=list)

    def validate(self, inventory: PhonemeInventory | None = None) -> "Score":
        prev_end = -math.inf
        for i, n in enumerate(self.notes):
            if n.duration <= 0:
                raise SchemaViolation(f"note {i}: duration must be positive")
            if n.onset < prev_end - 1e-9:
                raise SchemaViolation(f"note {i}: notes must be sorted and non-overlapping")
            if not MIDI_LO <= n.midi <= MIDI_HI:
                raise SchemaViolation(f"note {i}: midi {n.midi} outside [{MIDI_LO}, {MIDI_HI}]")
            if not n.phonemes:
                raise InvalidSyllable(f"note {i}: empty syllable")
            if inventory is not None:
                inventory.ids(n.phonemes)
                if not any(inventory.is_vowel(p) for p in n.phonemes):
                    raise InvalidSyllable(f"note {i}: syllable {list(n.phonemes)} has no vowel")
            prev_end = n.onset + n.duration
        return self

    @property
    def end(self) -> float:
        return max((n.onset + n.duration for n in self.notes), default=0.0)

    def transpose(self, semitones: int) -> "Score":
        return Score([Note(n.onset, n.duration, n.midi + semitones, n.phonemes) for n in self.notes])

    def shift(self, seconds: float) -> "Score":
        return Score([Note(n.onset + seconds, n.duration, n.midi, n.phonemes) for n in self.notes])

    # JSON: {"notes": [{"onset", "dur", "midi", "phonemes": [...]}]}
    def to_json(self) -> dict:
        return {"notes": [{"onset": n.onset, "dur": n.duration, "midi": n.midi,
                           "phonemes": list(n.phonemes)} for n in self.notes]}

    @classmethod
    def from_json(cls, obj: dict) -> "Score":
        try:
            notes = [Note(float(n["onset"]), float(n["dur"]), int(n["midi"]), tuple(n["phonemes"]))
                     for n in obj["notes"]]
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaViolation(f"bad score JSON: {e}") from None
        return cls(notes)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path) -> "Score":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class FrameLabels:
    """Per-10 ms labels. ``slots`` numbers each phoneme occurrence (-1 in gaps)."""

    phoneme_ids: np.ndarray
    pitch_tokens: np.ndarray
    slots: np.ndarray | None = None
    note_index: np.ndarray | None = None

    def __len__(self):
        return self.phoneme_ids.size

    def fit(self, n: int) -> "FrameLabels":
        """Trim or pad (BLANK / REST) to exactly ``n`` frames."""
        def f(a, fill):
            if a is None:
                return None
            return a[:n] if a.size >= n else np.concatenate([a, np.full(n - a.size, fill, a.dtype)])
        return FrameLabels(f(self.phoneme_ids, BLANK), f(self.pitch_tokens, REST),
                           f(self.slots, -1), f(self.note_index, -1))


def _syllable_layout(phonemes: Sequence[str], inventory: PhonemeInventory, frames: int,
                     note_idx: int) -> list[int]:
    """Frame count per phoneme: consonants one frame each, vowels share the rest."""
    is_v = [inventory.is_vowel(p) for p in phonemes]
    if not any(is_v):
        raise InvalidSyllable(f"note {note_idx}: syllable {list(phonemes)} has no vowel")
    n_cons = len(phonemes) - sum(is_v)
    n_vow = sum(is_v)
    if frames < n_cons + n_vow:
        raise NoteTooShort(note_idx, frames, n_cons + n_vow)
    remaining = frames - n_cons
    share, extra = divmod(remaining, n_vow)
    counts, k = [], 0
    for v in is_v:
        if v:
            counts.append(share + (1 if k < extra else 0))
            k += 1
        else:
            counts.append(1)
    return counts


def expand_score(score: Score, inventory: PhonemeInventory,
                 frame_rate_ds: float = FRAME_RATE_DS) -> FrameLabels:
    """Expand notes to per-frame phoneme ids and pitch tokens.

    Leading consonants take one frame each at the note start, trailing ones one
    frame each at the note end, vowels fill the rest. Frames between notes are
    BLANK / REST. Durations convert with half-away-from-zero rounding.
    """
    if not score.notes:
        raise EmptyScore("score has no notes")
    ph, pt, sl, ni = [], [], [], []
    pos = 0
    slot = 0
    for i, n in enumerate(score.notes):
        start = max(round_half_away(n.onset * frame_rate_ds), pos)
        frames = round_half_away(n.duration * frame_rate_ds)
        if start > pos:
            gap = start - pos
            ph += [BLANK] * gap
            pt += [REST] * gap
            sl += [-1] * gap
            ni += [-1] * gap
        for p, c in zip(n.phonemes, _syllable_layout(n.phonemes, inventory, frames, i)):
            ph += [inventory.index(p)] * c
            sl += [slot] * c
            slot += 1
        pt += [n.midi] * frames
        ni += [i] * frames
        pos = start + frames
    return FrameLabels(np.array(ph, dtype=np.int64), np.array(pt, dtype=np.int64),
                       np.array(sl, dtype=np.int64), np.array(ni, dtype=np.int64))


def collapse(ids: Sequence[int], slots: Sequence[int] | None = None) -> list[int]:
    """Merge runs and drop BLANK. With ``slots``, runs are delimited by slot id instead
    of by value, so equal neighbouring phonemes from different notes stay separate."""
    out = []
    prev = None
    keys = slots if slots is not None else ids
    for i, k in zip(ids, keys):
        if k != prev and i != BLANK:
            out.append(int(i))
        prev = k
    return out


def targets_from_score(score: Score, inventory: PhonemeInventory) -> np.ndarray:
    if not score.notes:
        raise EmptyScore("score has no notes")
    return np.array([inventory.index(p) for n in score.notes for p in n.phonemes], dtype=np.int64)


# ---------------------------------------------------------------- manifests

@dataclass
class Entry:
    id: str
    audio: Path
    targets: np.ndarray
    score: Score | None = None
    _clip: object = None

    @property
    def supervised(self) -> bool:
        return self.score is not None

    @property
    def clip(self):
        if self._clip is None:
            from .dsp import load_audio
            self._clip = load_audio(self.audio)
        return self._clip


def load_manifest(path, inventory: PhonemeInventory) -> list[Entry]:
    """JSON lines ``{id, audio, phonemes, score?}``; paths resolve against the manifest dir."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    root = path.parent
    entries = []
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as e:
            raise SchemaViolation(f"invalid JSON: {e}", lineno) from None
        for key in ("id", "audio", "phonemes"):
            if key not in obj:
                raise SchemaViolation(f"missing field {key!r}", lineno)
        extra = set(obj) - {"id", "audio", "phonemes", "score"}
        if extra:
            raise SchemaViolation(f"unknown fields {sorted(extra)}", lineno)
        audio = root / obj["audio"]
        if not audio.exists():
            raise MissingFile(f"line {lineno}: {audio}")
        try:
            targets = np.array(inventory.ids(obj["phonemes"].split()), dtype=np.int64)
        except SchemaViolation as e:
            raise SchemaViolation(str(e), lineno) from None
        if targets.size == 0:
            raise SchemaViolation("empty phoneme list", lineno)
        score = None
        if obj.get("score"):
            spath = root / obj["score"]
            if not spath.exists():
                raise MissingFile(f"line {lineno}: {spath}")
            try:
                score = Score.load(spath).validate(inventory)
            except (SchemaViolation, InvalidSyllable) as e:
                raise SchemaViolation(f"{spath.name}: {e}", lineno) from None
        entries.append(Entry(str(obj["id"]), audio, targets, score))
    return entries


def write_manifest(path, rows: Sequence[dict]):
    with open(path, "w") as f:
        for row in rows:
            f.write(json.dumps(row) + "\n")
