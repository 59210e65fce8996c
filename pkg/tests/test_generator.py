import numpy as np
import pytest

from svsmu import tensor as T
from svsmu.classifier import PhonemeProbMatrix
from svsmu.generator import (GeneratorConfig, LengthMismatch, MelPair, SingingVoiceGenerator,
                             TokenOutOfRange, UnknownSymbolId, coarse_target, generator_loss)


@pytest.fixture(scope="module")
def gen():
    g = SingingVoiceGenerator(GeneratorConfig.desk(5), np.random.default_rng(0))
    g.eval()
    return g


def one_hot(ids, v):
    return np.eye(v)[ids]


def test_soft_embedding_rows(gen):
    E = gen.phoneme_encoder.embed.table.data
    row = gen.embed_soft_phonemes(T.tensor(one_hot([3], 5).astype(np.float32))).data
    assert np.array_equal(row[0], E[3])
    uni = gen.embed_soft_phonemes(T.tensor(np.full((1, 5), 0.2, np.float32))).data
    assert np.allclose(uni[0], E.mean(axis=0), atol=1e-6)


def test_hard_and_one_hot_soft_paths_agree(gen):
    ids = np.array([0, 1, 1, 4, 2, 0])
    hard = gen.encode_phonemes(ids).data
    soft = gen.encode_phonemes(T.tensor(one_hot(ids, 5).astype(np.float32))).data
    assert np.array_equal(hard, soft)
    assert hard.shape == (6, 64)


def test_encoder_input_errors(gen):
    with pytest.raises(ValueError):
        gen.encode_phonemes(np.array([], dtype=int))
    with pytest.raises(UnknownSymbolId):
        gen.encode_phonemes([0, 5])
    with pytest.raises(TokenOutOfRange):
        gen.encode_pitch([60, 97])
    with pytest.raises(TokenOutOfRange):
        gen.encode_pitch([-1])


def test_pitch_encoder(gen):
    rest = gen.encode_pitch(np.zeros(7, int)).data
    assert rest.shape == (7, 64) and np.isfinite(rest).all()
    a = gen.encode_pitch([60, 62, 64]).data
    b = gen.encode_pitch([61, 63, 65]).data
    assert np.linalg.norm(a - b) > 0


def test_decode_shapes(gen):
    for n in (10, 20):
        ph = gen.encode_phonemes(np.ones(n, int))
        pt = gen.encode_pitch(np.full(n, 60))
        assert gen.decode(ph, pt).shape == (n, 80)
    with pytest.raises(LengthMismatch):
        gen.decode(gen.encode_phonemes(np.ones(4, int)), gen.encode_pitch(np.full(5, 60)))


@pytest.mark.parametrize("d", [2, 4])
@pytest.mark.parametrize("n", [1, 7, 100])
def test_supersample_length(d, n):
    g = SingingVoiceGenerator(GeneratorConfig.desk(5, downsample=d), np.random.default_rng(1))
    pair = g(np.ones(n, int), np.full(n, 60))
    assert pair.coarse.shape == (n, 80)
    assert pair.full.shape == (d * n, 80)


def test_supersample_zero_inputs_are_finite(gen):
    z = T.tensor(np.zeros((6, 64), np.float32))
    out = gen.supersample(T.tensor(np.zeros((6, 80), np.float32)), z, z).data
    assert out.shape == (12, 80) and np.isfinite(out).all()


def test_infer_is_clamped(gen):
    mel = gen.infer(np.ones(12, int), np.full(12, 60))
    assert mel.shape == (24, 80)
    assert mel.min() >= 0 and mel.max() <= 1


def test_coarse_target_is_mean_pool():
    m = np.arange(10, dtype=np.float32).reshape(5, 2)
    assert np.allclose(coarse_target(m, 2), [[1, 2], [5, 6], [8, 9]])


def pair_of(full, coarse):
    return MelPair(T.tensor(coarse.astype(np.float32)), T.tensor(full.astype(np.float32)))


def test_generator_loss_examples():
    rng = np.random.default_rng(2)
    mel = rng.random((8, 80)).astype(np.float32)
    md = coarse_target(mel, 2)
    total, lc, lf = generator_loss(pair_of(mel, md), mel, 2)
    assert float(total.data) == 0.0
    total, lc, lf = generator_loss(pair_of(mel + 0.1, md), mel, 2)
    assert float(total.data) == pytest.approx(0.1, abs=1e-6)
    full, coarse = rng.random((8, 80)), rng.random((4, 80))
    total, lc, lf = generator_loss(pair_of(full, coarse), mel, 2)
    ref = np.abs(coarse - mel.reshape(4, 2, 80).mean(axis=1)).mean() + np.abs(full - mel).mean()
    assert float(total.data) == pytest.approx(ref, rel=1e-5)
    assert float(total.data) == pytest.approx(float(lc.data) + float(lf.data), rel=1e-6)


def test_generator_loss_length_slack():
    rng = np.random.default_rng(3)
    mel = rng.random((9, 80)).astype(np.float32)
    generator_loss(pair_of(rng.random((10, 80)), rng.random((5, 80))), mel, 2)
    with pytest.raises(LengthMismatch):
        generator_loss(pair_of(rng.random((14, 80)), rng.random((7, 80))), mel, 2)


def test_classifier_logits_move_generator_loss():
    # finite-difference probe through the soft phoneme path
    rng = np.random.default_rng(4)
    g = SingingVoiceGenerator(GeneratorConfig.desk(4), rng)
    mel = rng.random((12, 80))
    logits = rng.normal(size=(6, 4))
    pitch = np.full(6, 60)

    def loss(lg):
        with T.precision("float64"):
            pair = g(PhonemeProbMatrix(T.log_softmax(T.tensor(lg)), T.softmax(T.tensor(lg))), pitch)
            return float(generator_loss(pair, mel, 2)[0].data)

    bumped = logits.copy()
    bumped[2, 1] += 1e-3
    assert abs(loss(bumped) - loss(logits)) > 1e-9


def test_overfit_one_clip_coarse_l1():
    from svsmu.trainer import Adam
    rng = np.random.default_rng(5)
    g = SingingVoiceGenerator(GeneratorConfig.desk(4), rng)
    ids = np.repeat([1, 2, 3, 1], 5)
    pitch = np.repeat([60, 64, 67, 60], 5)
    prof = rng.random((4, 80))
    mel = np.repeat(prof[ids], 2, axis=0).astype(np.float32)
    opt = Adam(dict(g.named_parameters()))
    for _ in range(200):
        for p in opt.params.values():
            p.grad = None
        total, lc, _ = generator_loss(g(ids, pitch), mel, 2)
        T.backward(total)
        opt.step(2e-3)
    assert float(lc.data) < 0.05
