import itertools
import math

import numpy as np
import pytest

from svsmu import tensor as T
from svsmu.classifier import (ClassifierConfig, InfeasibleTarget, PhonemeClassifier, TooShort,
                              ctc_loss, greedy_align, greedy_decode, unvoice_penalty)
from svsmu.layers import sinusoidal_encoding


def brute_force_ctc(probs, target):
    """-log sum over every frame path that collapses to ``target``."""
    n_t, v = probs.shape
    total = 0.0
    for path in itertools.product(range(v), repeat=n_t):
        out = [k for i, k in enumerate(path) if k != 0 and (i == 0 or k != path[i - 1])]
        if out == list(target):
            total += math.prod(probs[t, k] for t, k in enumerate(path))
    return -math.log(total) if total > 0 else math.inf


def all_cases():
    for v in (2, 3):
        for n_t in range(1, 5):
            for n in range(1, 4):
                for target in itertools.product(range(1, v), repeat=n):
                    yield n_t, v, target


def test_ctc_matches_path_enumeration_exhaustively():
    rng = np.random.default_rng(0)
    checked = 0
    with T.precision("float64"):
        for n_t, v, target in all_cases():
            logits = rng.normal(size=(n_t, v))
            lp = T.log_softmax(T.tensor(logits))
            ref = brute_force_ctc(np.exp(lp.data), target)
            if math.isinf(ref):
                with pytest.raises(InfeasibleTarget):
                    ctc_loss(lp, target)
            else:
                assert abs(float(ctc_loss(lp, target).data) - ref) < 1e-9
                checked += 1
    assert checked == 32  # feasible (T, V, target) combinations; the rest must raise


def test_ctc_hand_examples():
    with T.precision("float64"):
        half = T.tensor(np.log(np.full((1, 2), 0.5)))
        assert float(ctc_loss(half, [1]).data) == pytest.approx(math.log(2), abs=1e-12)
        two = T.tensor(np.log(np.full((2, 2), 0.5)))
        assert float(ctc_loss(two, [1]).data) == pytest.approx(-math.log(0.75), abs=1e-12)
        assert float(ctc_loss(two, [1]).data) == pytest.approx(0.2877, abs=1e-4)
        with pytest.raises(InfeasibleTarget):
            ctc_loss(T.tensor(np.log(np.full((1, 3), 1 / 3))), [1, 2])
        # a repeat needs a separating blank: 2 frames cannot hold [1, 1]
        with pytest.raises(InfeasibleTarget):
            ctc_loss(two, [1, 1])


def test_ctc_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    with T.precision("float64"):
        w = T.Parameter(rng.normal(size=(6, 4)))
        err = T.check_gradients(lambda: ctc_loss(T.log_softmax(w), [1, 2, 2, 3]), [w])
    assert err < 1e-3


def test_unvoice_penalty_examples():
    p = np.array([[0.2, 0.8], [0.9, 0.1], [0.4, 0.6]])
    assert float(unvoice_penalty(T.tensor(p), [1, 0, 1]).data) == pytest.approx(0.3)
    assert float(unvoice_penalty(T.tensor(p), [0, 0, 0]).data) == 0.0
    ones = np.tile([1.0, 0.0], (3, 1))
    assert float(unvoice_penalty(T.tensor(ones), [1, 1, 1]).data) == 1.0
    assert float(unvoice_penalty(T.tensor(ones[:, ::-1].copy()), [1, 1, 1]).data) == 0.0


def descend(penalty: bool, steps=40):
    """Gradient descent on free logits that start blank-dominated."""
    voiced = np.array([0, 1, 1, 1, 1, 1, 1, 0], bool)
    with T.precision("float64"):
        w = T.Parameter(np.zeros((8, 4)))
        w.data[:, 0] = 3.0
        blanks = []
        for _ in range(steps):
            w.grad = None
            lp = T.log_softmax(w)
            loss = ctc_loss(lp, [1, 2, 3])
            if penalty:
                loss = T.add(loss, unvoice_penalty(T.softmax(w), voiced))
            blanks.append(np.exp(lp.data)[voiced, 0].mean())
            T.backward(loss)
            w.data -= 0.5 * w.grad
    return blanks


def test_minimising_penalised_loss_lowers_blank_on_voiced_frames():
    with_pen, without = descend(True), descend(False)
    assert all(b < a for a, b in zip(with_pen, with_pen[1:]))
    assert with_pen[-1] < without[-1]


def test_greedy_align_examples():
    p = np.zeros((7, 3))
    p[:5, 1] = 1.0
    p[5:, 0] = 1.0
    assert greedy_align(p) == [{"phoneme": 1, "start_frame": 0, "end_frame": 4}]
    assert greedy_align(np.full((4, 3), 1 / 3)) == []
    q = np.array([[0.1, 0.9, 0], [0.1, 0.0, 0.9], [0.6, 0.4, 0], [0, 0.3, 0.7]])
    assert [(s["phoneme"], s["start_frame"], s["end_frame"]) for s in greedy_align(q)] == [(1, 0, 0), (2, 1, 1), (2, 3, 3)]
    assert greedy_decode(q) == [1, 2, 2]
    with pytest.raises(ValueError):
        greedy_align(p, threshold=1.0)


@pytest.fixture
def model():
    return PhonemeClassifier(ClassifierConfig.desk(6), np.random.default_rng(0))


@pytest.mark.parametrize("n, expect", [(400, 200), (401, 201), (2, 1)])
def test_subsample_length(model, n, expect):
    assert model.subsample(np.random.default_rng(1).random((n, 80))).shape == (expect, 64)


def test_subsample_factor_four():
    m = PhonemeClassifier(ClassifierConfig.desk(6, subsample_factor=4), np.random.default_rng(0))
    assert m.subsample(np.zeros((401, 80))).shape == (101, 64)
    with pytest.raises(TooShort):
        m.subsample(np.zeros((3, 80)))


def test_zero_mel_gives_bias_plus_positions(model):
    out = model.subsample(np.zeros((20, 80))).data
    conv_b = np.maximum(model.convs[0].b.data, 0)
    expect = math.sqrt(64) * (conv_b @ model.proj.w.data + model.proj.b.data) + sinusoidal_encoding(10, 64)
    assert np.allclose(out, expect, atol=1e-5)


def test_rows_are_distributions_and_near_uniform_at_init(model):
    model.eval()
    pr = model(np.random.default_rng(2).random((120, 80))).numpy()
    assert np.allclose(pr.sum(axis=1), 1, atol=1e-5)
    ent = -(pr * np.log(pr)).sum(axis=1)
    assert ent.min() >= 0.9 * math.log(6)


def test_windowed_attention_is_local():
    cfg = ClassifierConfig.desk(6, attn_window=2, n_layers=1)
    m = PhonemeClassifier(cfg, np.random.default_rng(0))
    m.eval()
    x = np.random.default_rng(3).random((40, 80))
    y = x.copy()
    y[-6:] += 1.0  # touches downsampled frames 17..19 (and 16 via the conv)
    a, b = m(x).numpy(), m(y).numpy()
    assert np.allclose(a[:13], b[:13])
    assert not np.allclose(a[-3:], b[-3:])


def test_same_input_same_output_regardless_of_order(model):
    model.eval()
    rng = np.random.default_rng(4)
    clips = [rng.random((n, 80)) for n in (30, 50, 40)]
    first = [model(c).numpy() for c in clips]
    second = [model(c).numpy() for c in reversed(clips)][::-1]
    for a, b in zip(first, second):
        assert np.array_equal(a, b)


def test_overfit_one_clip_collapses_to_target():
    from svsmu.trainer import Adam
    rng = np.random.default_rng(5)
    m = PhonemeClassifier(ClassifierConfig.desk(4), rng)
    # three flat spectral "phonemes" with silence between them
    prof = rng.random((4, 80))
    mel = np.concatenate([np.repeat(prof[[0, 1, 0, 2, 0, 3, 0]], 8, axis=0)])
    target = [1, 2, 3]
    opt = Adam(dict(m.named_parameters()))
    for step in range(150):
        for p in opt.params.values():
            p.grad = None
        T.backward(ctc_loss(m(mel).log_probs, target))
        opt.step(3e-3)
    m.eval()
    assert greedy_decode(m(mel)) == target
