"""Adam, the warm-up + cosine restart schedule, the three training regimes and checkpoints."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .classifier import InfeasibleTarget
from .model import Example, ModelConfig, SVSModel, supervised_losses, unsupervised_losses

log = logging.getLogger(__name__)

MODES = ("unsupervised", "supervised", "semi_supervised")
LOSS_KEYS = ("L", "L_C", "L_CTC", "L_UV", "L_G", "L_G_coarse", "L_G_full")
TRACE_COLUMNS = ("step", "lr", "L", "L_CTC", "L_UV", "L_G_coarse", "L_G_full")


class NoLabeledData(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    mode: str = "unsupervised"
    steps_per_cycle: int = 10000
    n_cycles: int = 3
    unsup_cycles: int = 2          # semi_supervised: cycles spent unsupervised before switching
    lr_init: float = 2.5e-4
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8
    warmup_steps: int = 1000
    cosine_floor: float = 0.1      # cosine ends at peak * cosine_floor
    grad_clip: float = 1.0
    uv_weight: float = 1.0
    effective_batch: int = 1
    seed: int = 0
    snapshot_every: int = 0
    log_every: int = 50

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.lr_init <= 0:
            raise ValueError("lr_init must be positive")
        if self.steps_per_cycle < self.warmup_steps:
            raise ValueError("steps_per_cycle must be >= warmup_steps")
        if self.effective_batch < 1:
            raise ValueError("effective_batch must be >= 1")

    @property
    def total_steps(self) -> int:
        return self.steps_per_cycle * self.n_cycles

    @classmethod
    def desk(cls, **kw) -> "TrainConfig":
        """Small-corpus preset: short cycles and a larger peak rate."""
        base = dict(steps_per_cycle=700, warmup_steps=50, lr_init=2e-3)
        base.update(kw)
        return cls(**base)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warm-up to ``lr_init / 2**cycle``, then cosine down to ``cosine_floor`` of that
    peak; constant at the last value once all cycles are done."""
    if step < 0:
        raise ValueError("step must be >= 0")
    n = cfg.steps_per_cycle
    if step >= cfg.n_cycles * n:
        c, s = cfg.n_cycles - 1, n
    else:
        c, s = divmod(step, n)
    peak = cfg.lr_init / 2 ** c
    w = cfg.warmup_steps
    if s < w:
        return peak * s / w
    span = n - w
    phase = (s - w) / span if span > 0 else 1.0
    floor = peak * cfg.cosine_floor
    return floor + (peak - floor) * 0.5 * (1.0 + math.cos(math.pi * phase))


class Adam:
    def __init__(self, params: dict[str, T.Parameter], beta1=0.5, beta2=0.9, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.t = 0

    def step(self, lr: float, names: Sequence[str] | None = None):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for n in names if names is not None else self.params:
            p = self.params[n]
            if p.grad is None:
                continue
            g = p.grad
            m, v = self.m[n], self.v[n]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def clip_grad_norm(params: Sequence[T.Parameter], max_norm: float) -> float:
    sq = sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params if p.grad is not None)
    norm = math.sqrt(sq)
    if max_norm > 0 and norm > max_norm:
        s = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad *= p.dtype.type(s)
    return norm


@dataclass
class Phase:
    mode: str          # "unsupervised" | "supervised"
    start: int
    end: int
    examples: list


def plan_phases(cfg: TrainConfig, examples: Sequence[Example], start_step: int = 0) -> list[Phase]:
    labeled = [e for e in examples if e.supervised]
    if cfg.mode == "unsupervised":
        phases = [Phase("unsupervised", 0, cfg.total_steps, list(examples))]
    elif cfg.mode == "supervised":
        phases = [Phase("supervised", 0, cfg.total_steps, labeled)]
    else:
        cut = cfg.unsup_cycles * cfg.steps_per_cycle
        phases = [Phase("unsupervised", 0, cut, list(examples)),
                  Phase("supervised", cut, cfg.total_steps, labeled)]
    phases = [replace(p, start=p.start + start_step, end=p.end + start_step) for p in phases]
    for p in phases:
        if not p.examples:
            raise NoLabeledData(f"{p.mode} phase has no eligible clips")
    return phases


class Trainer:
    """Owns the model, optimizer and step counter. Data order and dropout noise are
    derived from ``(seed, step)``, so resuming from a checkpoint replays the same run."""

    def __init__(self, model: SVSModel, cfg: TrainConfig, optimizer: Adam | None = None, step: int = 0):
        self.model = model
        self.cfg = cfg
        self.params = dict(model.named_parameters())
        self.opt = optimizer or Adam(self.params, cfg.beta1, cfg.beta2, cfg.eps)
        self.step = step
        self.trace: list[dict] = []
        self.skipped: set[str] = set()

    def batch_for(self, phase: Phase) -> list[Example]:
        k = self.cfg.effective_batch
        n = len(phase.examples)
        out = []
        for j in range((self.step - phase.start) * k, (self.step - phase.start + 1) * k):
            epoch, pos = divmod(j, n)
            order = np.random.default_rng([self.cfg.seed, phase.start, epoch]).permutation(n)
            out.append(phase.examples[order[pos]])
        return out

    def train_step(self, batch: Sequence[Example], mode: str) -> dict[str, float]:
        """One optimizer update from ``batch`` (gradients averaged over clips)."""
        if mode not in ("unsupervised", "supervised"):
            raise ValueError(mode)
        self.model.zero_grad()
        rng = np.random.default_rng([self.cfg.seed, 7, self.step])
        sums = {k: 0.0 for k in LOSS_KEYS}
        used = 0
        for ex in batch:
            try:
                if mode == "unsupervised":
                    losses = unsupervised_losses(self.model, ex, rng, self.cfg.uv_weight)
                else:
                    losses = supervised_losses(self.model, ex, rng)
            except InfeasibleTarget as e:
                if ex.id not in self.skipped:
                    log.warning("skipping %s: %s", ex.id, e)
                    self.skipped.add(ex.id)
                continue
            T.backward(T.scale(losses["L"], 1.0 / len(batch)))
            for k, v in losses.items():
                sums[k] += float(v.data)
            used += 1
        names = [n for n in self.params if mode == "unsupervised" or n.startswith("generator.")]
        lr = lr_at(self.step, self.cfg)
        if used:
            clip_grad_norm([self.params[n] for n in names], self.cfg.grad_clip)
            self.opt.step(lr, names)
        self.step += 1
        out = {k: (v / used if used else float("nan")) for k, v in sums.items()}
        if mode == "supervised":
            out["L_C"] = out["L_CTC"] = out["L_UV"] = 0.0
        out["lr"] = lr
        out["step"] = self.step
        self.trace.append(out)
        return out

    def fit(self, phases: Sequence[Phase], until: int | None = None,
            snapshot: Callable[["Trainer"], None] | None = None):
        end = phases[-1].end if until is None else until
        while self.step < end:
            phase = next(p for p in phases if p.start <= self.step < p.end)
            rec = self.train_step(self.batch_for(phase), phase.mode)
            if self.cfg.log_every and self.step % self.cfg.log_every == 0:
                log.info("step %d lr %.3g L %.4f L_CTC %.4f L_UV %.4f L_G %.4f", self.step, rec["lr"],
                         rec["L"], rec["L_CTC"], rec["L_UV"], rec["L_G"])
            if snapshot is not None and self.cfg.snapshot_every and self.step % self.cfg.snapshot_every == 0:
                snapshot(self)
        return self

    def checkpoint(self) -> "Checkpoint":
        return Checkpoint(self.model.cfg, self.cfg,
                          {n: p.data.copy() for n, p in self.params.items()},
                          {n: a.copy() for n, a in self.opt.m.items()},
                          {n: a.copy() for n, a in self.opt.v.items()},
                          self.opt.t, self.step)


# ---------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"SVSC"
CKPT_VERSION = 1


@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: TrainConfig
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    adam_t: int = 0
    step: int = 0
    meta: dict = field(default_factory=dict)
    trace: list = field(default_factory=list, repr=False)  # in-memory only; see write_trace

    def build_model(self) -> SVSModel:
        model = SVSModel(self.model_config)
        model.load_state_dict(self.params)
        return model

    def trainer(self, cfg: TrainConfig | None = None) -> Trainer:
        model = self.build_model()
        cfg = cfg or self.train_config
        opt = Adam(dict(model.named_parameters()), cfg.beta1, cfg.beta2, cfg.eps)
        for n in opt.m:
            if n in self.adam_m:
                opt.m[n] = self.adam_m[n].astype(opt.m[n].dtype)
                opt.v[n] = self.adam_v[n].astype(opt.v[n].dtype)
        opt.t = self.adam_t
        return Trainer(model, cfg, opt, self.step)


def _write_tensor(f, name: str, arr: np.ndarray):
    raw = name.encode()
    arr = np.ascontiguousarray(arr, dtype="<f4")
    f.write(struct.pack("<I", len(raw)) + raw)
    f.write(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(arr.tobytes())


def save_checkpoint(path, ckpt: Checkpoint):
    """``SVSC`` | u32 version | u32 len + canonical JSON | u32 count | tensors; little-endian.

    Each tensor: u32 name length, UTF-8 name, u32 ndim, u32 dims, f32 row-major data.
    Optimizer moments are stored as ``adam.m/<name>`` and ``adam.v/<name>``.
    The file is written to a temporary sibling and renamed into place.
    """
    path = Path(path)
    header = {"model": ckpt.model_config.to_json(), "train": asdict(ckpt.train_config),
              "step": ckpt.step, "adam_t": ckpt.adam_t,
              "rng": {"scheme": "seed+step", "seed": ckpt.train_config.seed}, "meta": ckpt.meta}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    tensors = list(ckpt.params.items())
    tensors += [(f"adam.m/{n}", a) for n, a in ckpt.adam_m.items()]
    tensors += [(f"adam.v/{n}", a) for n, a in ckpt.adam_v.items()]
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(blob)) + blob)
        f.write(struct.pack("<I", len(tensors)))
        for n, a in tensors:
            _write_tensor(f, n, a)
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (magic {raw[:4]!r})")
    version, n = struct.unpack("<II", raw[4:12])
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[12:12 + n])
    off = 12 + n
    (count,) = struct.unpack("<I", raw[off:off + 4])
    off += 4
    params, m, v = {}, {}, {}
    for _ in range(count):
        (ln,) = struct.unpack("<I", raw[off:off + 4])
        name = raw[off + 4:off + 4 + ln].decode()
        off += 4 + ln
        (ndim,) = struct.unpack("<I", raw[off:off + 4])
        shape = struct.unpack(f"<{ndim}I", raw[off + 4:off + 4 + 4 * ndim])
        off += 4 + 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(raw[off:off + 4 * size], dtype="<f4").reshape(shape).astype(np.float32)
        off += 4 * size
        if name.startswith("adam.m/"):
            m[name[7:]] = arr
        elif name.startswith("adam.v/"):
            v[name[7:]] = arr
        else:
            params[name] = arr
    return Checkpoint(ModelConfig.from_json(header["model"]), TrainConfig(**header["train"]),
                      params, m, v, header["adam_t"], header["step"], header.get("meta", {}))


def write_trace(path, trace: Sequence[dict]):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(TRACE_COLUMNS)
        for r in trace:
            w.writerow([r["step"]] + [f"{r[k]:.8g}" for k in TRACE_COLUMNS[1:]])


# ---------------------------------------------------------------- entry points

def run(cfg: TrainConfig, examples: Sequence[Example], model_config: ModelConfig | None = None,
        out_dir=None, resume: Checkpoint | None = None, until: int | None = None) -> Checkpoint:
    """Train from scratch (or continue ``resume``) according to ``cfg.mode``.

    With ``out_dir``, snapshots go to ``snapshot_<step>.svsc`` and the final model to
    ``model.svsc`` (atomically), plus ``loss.csv``.
    """
    if not examples:
        raise ValueError("dataset is empty")
    if resume is not None:
        trainer = resume.trainer(cfg)
    else:
        if model_config is None:
            raise ValueError("model_config is required when not resuming")
        trainer = Trainer(SVSModel(model_config), cfg)
    phases = plan_phases(cfg, examples)
    out = Path(out_dir) if out_dir is not None else None
    snap = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        snap = lambda tr: save_checkpoint(out / f"snapshot_{tr.step:07d}.svsc", tr.checkpoint())  # noqa: E731
    trainer.fit(phases, until=until, snapshot=snap)
    ckpt = trainer.checkpoint()
    ckpt.trace = trainer.trace
    if out is not None:
        save_checkpoint(out / "model.svsc", ckpt)
        write_trace(out / "loss.csv", trainer.trace)
    return ckpt


def fine_tune(ckpt: Checkpoint, labeled: Sequence[Example], cycles: int = 1, out_dir=None,
              cfg: TrainConfig | None = None) -> Checkpoint:
    """Continue in supervised mode for ``cycles`` fresh annealing cycles; each cycle's peak
    keeps halving from where the checkpoint's schedule stopped."""
    labeled = [e for e in labeled if e.supervised]
    if not labeled:
        raise NoLabeledData("fine-tuning needs clips with scores")
    base = cfg or ckpt.train_config
    done = -(-ckpt.step // base.steps_per_cycle)
    ft_cfg = replace(base, mode="supervised", n_cycles=done + cycles)
    trainer = ckpt.trainer(ft_cfg)
    start = done * base.steps_per_cycle
    trainer.step = max(trainer.step, start)
    phases = [Phase("supervised", start, start + cycles * base.steps_per_cycle, labeled)]
    trainer.fit(phases)
    out = trainer.checkpoint()
    out.trace = trainer.trace
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        save_checkpoint(Path(out_dir) / "model.svsc", out)
        write_trace(Path(out_dir) / "loss.csv", trainer.trace)
    return out
