import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from svsmu.corpus import CorpusSpec, synth_corpus, write_corpus
from svsmu.dsp import SAMPLE_RATE
from svsmu.pitch import REST, estimate_f0
from svsmu.score import (BLANK, BLANK_SYMBOL, EmptyScore, InvalidSyllable, MissingFile, Note,
                         NoteTooShort, PhonemeInventory, SchemaViolation, Score, collapse,
                         expand_score, load_manifest, round_half_away, targets_from_score,
                         write_manifest)

INV = PhonemeInventory.from_symbols(["a", "e", "i", "k", "s", "t"], vowels=["a", "e", "i"])


def names(ids):
    return [INV.symbols[i] for i in ids]


def test_consonants_take_one_frame_at_note_edges():
    lab = expand_score(Score([Note(0.0, 0.1, 60, ("k", "a", "t"))]), INV)
    assert names(lab.phoneme_ids) == ["k"] + ["a"] * 8 + ["t"]
    assert lab.pitch_tokens.tolist() == [60] * 10


def test_vowel_only_note():
    lab = expand_score(Score([Note(0.0, 0.05, 64, ("a",))]), INV)
    assert names(lab.phoneme_ids) == ["a"] * 5


def test_note_too_short():
    with pytest.raises(NoteTooShort):
        expand_score(Score([Note(0.0, 0.02, 60, ("s", "t", "a"))]), INV)


def test_syllable_without_vowel():
    with pytest.raises(InvalidSyllable):
        expand_score(Score([Note(0.0, 0.1, 60, ("s", "t"))]), INV)


def test_gaps_are_blank_and_rest():
    lab = expand_score(Score([Note(0.0, 0.03, 60, ("a",)), Note(0.05, 0.03, 62, ("e",))]), INV)
    assert names(lab.phoneme_ids) == ["a"] * 3 + [BLANK_SYMBOL] * 2 + ["e"] * 3
    assert lab.pitch_tokens.tolist() == [60] * 3 + [REST] * 2 + [62] * 3


def test_mid_syllable_consonant_gets_one_frame():
    lab = expand_score(Score([Note(0.0, 0.06, 60, ("a", "k", "i"))]), INV)
    assert names(lab.phoneme_ids) == ["a", "a", "a", "k", "i", "i"]


def test_rounding_is_half_away_from_zero():
    assert round_half_away(2.5) == 3
    assert round_half_away(-2.5) == -3
    assert round_half_away(0.015 * 100) == 2
    lab = expand_score(Score([Note(0.0, 0.025, 60, ("a",))]), INV)
    assert len(lab) == 3


def test_targets():
    s = Score([Note(0, 0.1, 60, ("k", "a")), Note(0.1, 0.1, 60, ("t", "a"))])
    assert names(targets_from_score(s, INV)) == ["k", "a", "t", "a"]
    rep = Score([Note(0, 0.1, 60, ("a",)), Note(0.1, 0.1, 62, ("a",))])
    assert names(targets_from_score(rep, INV)) == ["a", "a"]
    with pytest.raises(EmptyScore):
        targets_from_score(Score([]), INV)
    with pytest.raises(EmptyScore):
        expand_score(Score([]), INV)


@st.composite
def scores(draw):
    notes, t = [], round(draw(st.integers(0, 20)) / 100, 2)
    for _ in range(draw(st.integers(1, 6))):
        pre = draw(st.lists(st.sampled_from("kst"), max_size=2))
        vow = draw(st.lists(st.sampled_from("aei"), min_size=1, max_size=2))
        post = draw(st.lists(st.sampled_from("kst"), max_size=2))
        syl = tuple(pre + vow + post)
        frames = draw(st.integers(len(syl), len(syl) + 30))
        notes.append(Note(t, frames / 100, draw(st.integers(36, 96)), syl))
        t = round(t + frames / 100 + draw(st.integers(0, 5)) / 100, 2)
    return Score(notes).validate(INV)


@settings(max_examples=1000, deadline=None)
@given(scores())
def test_collapsed_frames_reproduce_targets(score):
    lab = expand_score(score, INV)
    assert collapse(lab.phoneme_ids, lab.slots) == targets_from_score(score, INV).tolist()
    gaps = sum(round_half_away(b.onset * 100) - round_half_away((a.onset + a.duration) * 100)
               for a, b in zip(score.notes, score.notes[1:]))
    lead = round_half_away(score.notes[0].onset * 100)
    assert len(lab) == lead + gaps + sum(round_half_away(n.duration * 100) for n in score.notes)
    # outside notes: BLANK exactly where REST
    off = lab.note_index < 0
    assert ((lab.phoneme_ids == BLANK) == off).all()
    assert ((lab.pitch_tokens == REST) == off).all()


@settings(max_examples=200, deadline=None)
@given(scores(), st.integers(0, 50))
def test_translation_equivariance(score, shift_frames):
    a = expand_score(score, INV)
    b = expand_score(score.shift(shift_frames / 100), INV)
    assert len(b) == len(a) + shift_frames
    assert np.array_equal(b.phoneme_ids[shift_frames:], a.phoneme_ids)
    assert np.array_equal(b.pitch_tokens[shift_frames:], a.pitch_tokens)
    assert (b.phoneme_ids[:shift_frames] == BLANK).all()


def test_plain_dedupe_merges_repeated_neighbours():
    # without slot ids, two adjacent [a] notes collapse to a single a
    s = Score([Note(0, 0.05, 60, ("a",)), Note(0.05, 0.05, 62, ("a",))])
    lab = expand_score(s, INV)
    assert names(collapse(lab.phoneme_ids)) == ["a"]
    assert names(collapse(lab.phoneme_ids, lab.slots)) == ["a", "a"]


def test_fit_pads_and_trims():
    lab = expand_score(Score([Note(0, 0.05, 60, ("a",))]), INV)
    assert lab.fit(7).phoneme_ids.tolist()[5:] == [BLANK, BLANK]
    assert lab.fit(7).pitch_tokens.tolist()[5:] == [REST, REST]
    assert len(lab.fit(3)) == 3


@pytest.mark.parametrize("notes, exc", [
    ([Note(0, 0.1, 60, ("a",)), Note(0.05, 0.1, 60, ("a",))], SchemaViolation),
    ([Note(0, 0.0, 60, ("a",))], SchemaViolation),
    ([Note(0, 0.1, 30, ("a",))], SchemaViolation),
    ([Note(0, 0.1, 60, ())], InvalidSyllable),
    ([Note(0, 0.1, 60, ("x", "a"))], SchemaViolation),
])
def test_score_validation(notes, exc):
    with pytest.raises(exc):
        Score(notes).validate(INV)


def test_score_json_round_trip(tmp_path):
    s = Score([Note(0.1, 0.25, 60, ("k", "a")), Note(0.4, 0.5, 64, ("i",))])
    s.save(tmp_path / "s.json")
    obj = json.loads((tmp_path / "s.json").read_text())
    assert set(obj["notes"][0]) == {"onset", "dur", "midi", "phonemes"}
    assert Score.load(tmp_path / "s.json") == s


def test_inventory_file(tmp_path):
    p = tmp_path / "inv.txt"
    INV.save(p)
    assert p.read_text().splitlines()[1] == BLANK_SYMBOL
    back = PhonemeInventory.load(p)
    assert back == INV
    p.write_text("# comment\n<blank>\na vowel  # open\nk consonant\n")
    inv = PhonemeInventory.load(p)
    assert inv.symbols == (BLANK_SYMBOL, "a", "k") and inv.vowels == {"a"}
    p.write_text("a vowel\n<blank>\n")
    with pytest.raises(SchemaViolation):
        PhonemeInventory.load(p)


@pytest.fixture
def dataset(tmp_path):
    (tmp_path / "x.wav").write_bytes(b"")
    Score([Note(0, 0.2, 60, ("k", "a"))]).save(tmp_path / "x.score.json")
    return tmp_path


def test_manifest_modes(dataset):
    write_manifest(dataset / "m.jsonl", [
        {"id": "u", "audio": "x.wav", "phonemes": "k a"},
        {"id": "s", "audio": "x.wav", "phonemes": "k a", "score": "x.score.json"},
    ])
    u, s = load_manifest(dataset / "m.jsonl", INV)
    assert not u.supervised and s.supervised
    assert names(u.targets) == ["k", "a"]
    assert s.audio == dataset / "x.wav"


@pytest.mark.parametrize("rows, line", [
    ([{"id": "a", "audio": "x.wav", "phonemes": "a"}, {"id": "b", "audio": "x.wav", "phonemes": "a q"}], 2),
    ([{"id": "a", "audio": "x.wav"}], 1),
    ([{"id": "a", "audio": "x.wav", "phonemes": "a", "speaker": 3}], 1),
    ([{"id": "a", "audio": "x.wav", "phonemes": ""}], 1),
])
def test_manifest_schema_violation_reports_line(dataset, rows, line):
    write_manifest(dataset / "m.jsonl", rows)
    with pytest.raises(SchemaViolation) as e:
        load_manifest(dataset / "m.jsonl", INV)
    assert e.value.line == line


def test_manifest_missing_files(dataset):
    with pytest.raises(MissingFile):
        load_manifest(dataset / "nope.jsonl", INV)
    write_manifest(dataset / "m.jsonl", [{"id": "a", "audio": "gone.wav", "phonemes": "a"}])
    with pytest.raises(MissingFile):
        load_manifest(dataset / "m.jsonl", INV)
    (dataset / "bad.jsonl").write_text("{not json\n")
    with pytest.raises(SchemaViolation):
        load_manifest(dataset / "bad.jsonl", INV)


def test_synth_corpus_deterministic():
    spec = CorpusSpec(n_clips=3, phonemes=("a", "i", "s", "k"), seed=7)
    a, _ = synth_corpus(spec)
    b, _ = synth_corpus(spec)
    for x, y in zip(a, b):
        assert x.clip.samples.tobytes() == y.clip.samples.tobytes()
        assert x.score == y.score


def test_synth_corpus_durations_and_labels():
    items, inv = synth_corpus(CorpusSpec(n_clips=6, phonemes=("a", "e", "i", "o", "u", "s", "k", "t"),
                                         seed=1, clip_seconds=(2.5, 12.0)))
    for it in items:
        assert 2.5 <= it.clip.duration <= 12.0
        assert it.score.end <= it.clip.duration
        assert collapse(it.labels.phoneme_ids, it.labels.slots) == it.targets.tolist()


def test_synth_corpus_pitch_matches_score():
    items, _ = synth_corpus(CorpusSpec(n_clips=1, phonemes=("a",), midi_range=(69, 69), seed=2))
    it = items[0]
    c = estimate_f0(it.clip)
    for n in it.score.notes:
        # inner half of each note, away from transitions
        a = int((n.onset + n.duration * 0.25) * c.frame_rate)
        b = int((n.onset + n.duration * 0.75) * c.frame_rate - 1024 / SAMPLE_RATE * c.frame_rate)
        f = c.f0_hz[a:max(b, a + 1)]
        assert c.voiced[a:max(b, a + 1)].all()
        assert np.abs(12 * np.log2(np.median(f) / 440.0)) < 0.1


def test_write_corpus_loads_back(tmp_path):
    items, inv = synth_corpus(CorpusSpec(n_clips=2, seed=4))
    manifest = write_corpus(items, inv, tmp_path)
    inv2 = PhonemeInventory.load(tmp_path / "inventory.txt")
    entries = load_manifest(manifest, inv2)
    assert [e.id for e in entries] == [it.id for it in items]
    assert all(e.supervised for e in entries)
    assert np.allclose(entries[0].clip.samples, items[0].clip.samples, atol=1e-6)
