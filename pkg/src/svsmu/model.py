"""The joint model (classifier + generator), training examples, and the two forward regimes."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .classifier import (ClassifierConfig, InfeasibleTarget, PhonemeClassifier, ctc_loss,
                         unvoice_penalty)
from .dsp import FRAME_RATE, HOP, AudioClip, MelSpectrogram, invert_mel, melspectrogram
from .generator import GeneratorConfig, SingingVoiceGenerator, generator_loss
from .layers import Module
from .pitch import PitchContour, estimate_f0, quantize_contour, voiced_mask
from .score import FrameLabels, PhonemeInventory, Score, expand_score

log = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    classifier: ClassifierConfig
    generator: GeneratorConfig
    symbols: tuple[str, ...]
    vowels: tuple[str, ...]
    seed: int = 0

    @property
    def downsample(self) -> int:
        return self.generator.downsample

    @property
    def inventory(self) -> PhonemeInventory:
        return PhonemeInventory(tuple(self.symbols), frozenset(self.vowels))

    @classmethod
    def create(cls, inventory: PhonemeInventory, preset: str = "desk", seed: int = 0,
               classifier: dict | None = None, generator: dict | None = None) -> "ModelConfig":
        v = len(inventory)
        if preset == "desk":
            c = ClassifierConfig.desk(v, **(classifier or {}))
            g = GeneratorConfig.desk(v, **(generator or {}))
        elif preset == "full":
            c = ClassifierConfig(v, **(classifier or {}))
            g = GeneratorConfig(v, **(generator or {}))
        else:
            raise ValueError(f"unknown preset {preset!r}")
        if c.subsample_factor != g.downsample:
            raise ValueError("classifier subsample factor must equal generator downsample factor")
        return cls(c, g, tuple(inventory.symbols), tuple(sorted(inventory.vowels)), seed)

    def to_json(self) -> dict:
        return {"classifier": asdict(self.classifier), "generator": asdict(self.generator),
                "symbols": list(self.symbols), "vowels": list(self.vowels), "seed": self.seed}

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(ClassifierConfig(**obj["classifier"]), GeneratorConfig(**obj["generator"]),
                   tuple(obj["symbols"]), tuple(obj["vowels"]), obj.get("seed", 0))


class SVSModel(Module):
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.classifier = PhonemeClassifier(cfg.classifier, rng)
        self.generator = SingingVoiceGenerator(cfg.generator, rng)
        self.name_parameters()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
        for n, p in params.items():
            if state[n].shape != p.shape:
                raise ValueError(f"{n}: shape {state[n].shape} != {p.shape}")
            p.data = np.array(state[n], dtype=p.dtype)


@dataclass
class Example:
    """One clip's cached training inputs, all on the model's frame grids."""

    id: str
    mel: np.ndarray                      # (T, 80)
    targets: np.ndarray                  # CTC targets
    voiced: np.ndarray                   # (T_ds,) bool
    pseudo_pitch: np.ndarray             # (T_ds,) quantised F0 tokens
    labels: FrameLabels | None = None    # score-derived, fitted to T_ds
    score: Score | None = None
    contour: PitchContour | None = field(default=None, repr=False)

    @property
    def n_ds(self) -> int:
        return self.voiced.size

    @property
    def supervised(self) -> bool:
        return self.labels is not None


def prepare_example(id: str, clip: AudioClip, targets, inventory: PhonemeInventory,
                    score: Score | None = None, downsample: int = 2,
                    contour: PitchContour | None = None) -> Example:
    mel = melspectrogram(clip).frames
    contour = contour if contour is not None else estimate_f0(clip)
    return example_from_features(id, mel, contour, targets, inventory, score, downsample)


def example_from_features(id: str, mel: np.ndarray, contour: PitchContour, targets,
                          inventory: PhonemeInventory, score: Score | None = None,
                          downsample: int = 2) -> Example:
    """Build an example from a cached mel and F0 contour (contour trimmed to the mel length)."""
    contour = PitchContour(contour.f0_hz[:mel.shape[0]], contour.voiced[:mel.shape[0]], contour.frame_rate)
    n_ds = -(-mel.shape[0] // downsample)
    voiced = voiced_mask(contour, downsample)
    pitch = quantize_contour(contour, downsample)
    labels = expand_score(score, inventory, FRAME_RATE / downsample).fit(n_ds) if score is not None else None
    return Example(id, mel, np.asarray(targets, dtype=np.int64), voiced, pitch, labels, score, contour)


def unsupervised_losses(model: SVSModel, ex: Example, rng=None, uv_weight: float = 1.0) -> dict[str, T.Tensor]:
    """Classifier on the mel, soft phonemes + pseudo pitch into the generator.

    ``L = L_C + L_G`` with ``L_C = L_CTC + uv_weight * L_UV``; ``L_UV`` is reported unweighted.
    """
    probs = model.classifier(ex.mel, rng)
    l_ctc = ctc_loss(probs.log_probs, ex.targets)
    l_uv = unvoice_penalty(probs, ex.voiced)
    l_c = T.add(l_ctc, T.scale(l_uv, uv_weight) if uv_weight != 1.0 else l_uv)
    pair = model.generator(probs, ex.pseudo_pitch, rng)
    l_g, l_gc, l_gf = generator_loss(pair, ex.mel, model.cfg.downsample)
    return {"L": T.add(l_c, l_g), "L_C": l_c, "L_CTC": l_ctc, "L_UV": l_uv, "L_G": l_g,
            "L_G_coarse": l_gc, "L_G_full": l_gf}


def supervised_losses(model: SVSModel, ex: Example, rng=None) -> dict[str, T.Tensor]:
    """Generator only, driven by the score's frame labels; L = L_G."""
    if ex.labels is None:
        raise ValueError(f"{ex.id}: supervised mode needs a score")
    pair = model.generator(ex.labels.phoneme_ids, ex.labels.pitch_tokens, rng)
    l_g, l_gc, l_gf = generator_loss(pair, ex.mel, model.cfg.downsample)
    return {"L": l_g, "L_G": l_g, "L_G_coarse": l_gc, "L_G_full": l_gf}


def synthesize(model: SVSModel, score: Score, iterations: int = 60, seed: int = 0
               ) -> tuple[AudioClip, np.ndarray, FrameLabels]:
    """Score -> frame labels -> hard-path generator -> Griffin-Lim audio.

    The waveform is trimmed to the labelled span (``D * HOP`` samples per label
    frame), so it lines up sample-for-sample with audio rendered from the same score.
    """
    labels = expand_score(score, model.cfg.inventory, FRAME_RATE / model.cfg.downsample)
    mel = model.generator.infer(labels.phoneme_ids, labels.pitch_tokens)
    clip = invert_mel(MelSpectrogram(mel), iterations=iterations, seed=seed)
    n = len(labels) * model.cfg.downsample * HOP
    x = clip.samples[:n]
    if x.size < n:
        x = np.pad(x, (0, n - x.size))
    return AudioClip(x, clip.sample_rate), mel, labels


__all__ = ["synthesize", "ModelConfig", "SVSModel", "Example", "prepare_example", "example_from_features", "unsupervised_losses",
           "supervised_losses", "InfeasibleTarget"]
