import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from svsmu.dsp import SAMPLE_RATE, AudioClip
from svsmu.pitch import (REST, NonPositiveF0, PitchContour, estimate_f0, hz_to_midi, load_contour,
                         midi_to_hz, quantize_contour, save_contour, voiced_mask)


def sine(f0, seconds=0.5, db=-6.0):
    t = np.arange(int(seconds * SAMPLE_RATE)) / SAMPLE_RATE
    return AudioClip((10 ** (db / 20) * np.sin(2 * np.pi * f0 * t)).astype(np.float32))


def sawtooth(f0, seconds=0.5, amp=0.5):
    # band-limited so it stays clean at 24 kHz
    t = np.arange(int(seconds * SAMPLE_RATE)) / SAMPLE_RATE
    h = np.arange(1, int(11000 // f0) + 1)
    x = np.sin(2 * np.pi * f0 * np.outer(t, h)) @ (1.0 / h)
    return AudioClip((amp * x / np.abs(x).max()).astype(np.float32))


def interior(c, margin=6):
    return slice(margin, len(c) - margin)


def semis(f, ref):
    return np.abs(12 * np.log2(f / ref))


@pytest.mark.parametrize("f0", [110.0, 220.0, 440.0, 660.0, 880.0])
def test_sine_tracked_within_fifth_of_semitone(f0):
    c = estimate_f0(sine(f0))
    s = interior(c)
    assert c.voiced[s].all()
    assert semis(c.f0_hz[s], f0).max() < 0.2


@pytest.mark.parametrize("f0", [110.0, 196.0, 330.0, 523.25, 880.0])
def test_sawtooth_tracked_and_octave_stable(f0):
    c = estimate_f0(sawtooth(f0))
    s = interior(c)
    assert c.voiced[s].mean() > 0.95
    dev = semis(c.f0_hz[s][c.voiced[s]], f0)
    assert dev.max() < 7
    assert np.median(dev) < 0.2


def test_silence_is_unvoiced():
    c = estimate_f0(AudioClip(np.zeros(SAMPLE_RATE // 2, np.float32)))
    assert not c.voiced.any()
    assert (c.f0_hz == 0).all()


def test_white_noise_mostly_unvoiced():
    rng = np.random.default_rng(3)
    c = estimate_f0(AudioClip(np.clip(0.3 * rng.standard_normal(SAMPLE_RATE), -1, 1).astype(np.float32)))
    assert (~c.voiced).mean() > 0.9


def test_voicing_boundaries_follow_the_signal():
    # 0.3 s tone between two 0.3 s silences; frame grid is left-aligned, 1024-sample window
    x = np.concatenate([np.zeros(7200), sine(330, 0.3).samples, np.zeros(7200)]).astype(np.float32)
    c = estimate_f0(AudioClip(x))
    win = 1024 / SAMPLE_RATE
    t = np.arange(len(c)) / c.frame_rate
    inside = (t >= 0.3) & (t + win <= 0.6)
    outside = (t + win <= 0.3) | (t >= 0.6)
    assert c.voiced[inside].mean() > 0.95
    assert (~c.voiced[outside]).mean() > 0.95


def test_hz_to_midi_reference_points():
    assert hz_to_midi(440.0) == 69.0
    assert hz_to_midi(220.0) == 57.0
    assert abs(hz_to_midi(261.6256) - 60.0) < 1e-3
    assert np.allclose(midi_to_hz(hz_to_midi(np.array([55.0, 1000.0]))), [55.0, 1000.0])


@pytest.mark.parametrize("bad", [0.0, -1.0])
def test_hz_to_midi_rejects_non_positive(bad):
    with pytest.raises(NonPositiveF0):
        hz_to_midi(bad)


def contour(f0s):
    f0s = np.asarray(f0s, float)
    return PitchContour(f0s, f0s > 0)


def test_quantize_constant_and_silent():
    assert (quantize_contour(contour([440.0] * 8), 2) == 69).all()
    assert (quantize_contour(contour([0.0] * 8), 2) == REST).all()


def test_quantize_rounds_to_nearest_semitone():
    assert hz_to_midi(449.0) == pytest.approx(69.35, abs=0.01)
    assert quantize_contour(contour([449.0] * 4), 2).tolist() == [69, 69]


def test_quantize_clamps_to_token_range():
    # 55 Hz is MIDI 33; the top of the F0 search range (1200 Hz) is only MIDI 86
    assert quantize_contour(contour([55.0, 55.0, 1150.0, 1150.0]), 2).tolist() == [36, 86]


def test_voiced_mask_majority_rule():
    assert voiced_mask(contour([200.0] * 6), 2).all()
    assert voiced_mask(contour([200, 200, 0, 0, 0, 200]), 3).tolist() == [True, False]
    assert not voiced_mask(contour([200, 0] * 4), 2).any()


def test_partial_final_block():
    # a short trailing block still needs more than D/2 voiced frames
    assert voiced_mask(contour([200, 200, 200, 200]), 3).tolist() == [True, False]
    assert voiced_mask(contour([200, 200, 200, 200, 200]), 3).tolist() == [True, True]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.one_of(st.just(0.0), st.floats(50, 1200)), min_size=1, max_size=40),
       st.integers(1, 4))
def test_mask_and_tokens_agree(f0s, d):
    c = contour(f0s)
    m = voiced_mask(c, d)
    tok = quantize_contour(c, d)
    assert len(m) == len(tok) == -(-len(f0s) // d)
    assert ((tok != REST) == m).all()


@pytest.mark.parametrize("k", range(-5, 6))
def test_transposition_shifts_tokens(k):
    base = midi_to_hz(62)
    a = quantize_contour(estimate_f0(sawtooth(base, 0.4)), 2)
    b = quantize_contour(estimate_f0(sawtooth(base * 2 ** (k / 12), 0.4)), 2)
    both = (a != REST) & (b != REST)
    assert both.mean() > 0.8
    assert (b[both] - a[both] == k).all()


def test_contour_invariant_enforced():
    with pytest.raises(ValueError):
        PitchContour(np.array([100.0, 0.0]), np.array([True, True]))


def test_contour_file_round_trip(tmp_path):
    c = estimate_f0(sine(330, 0.3))
    save_contour(tmp_path / "x.f0", c)
    raw = (tmp_path / "x.f0").read_bytes()
    assert raw[:4] == b"F0C1"
    assert len(raw) == 8 + 5 * len(c)
    back = load_contour(tmp_path / "x.f0")
    assert (back.voiced == c.voiced).all()
    assert np.array_equal(back.f0_hz, c.f0_hz.astype(np.float32).astype(np.float64))
