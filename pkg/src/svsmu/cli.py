"""Command-line driver: prepare, train, finetune, infer, align, eval, synth-corpus.

Configuration precedence (lowest to highest): built-in defaults, the YAML file given
with ``--config``, ``--set section.key=value`` overrides, then dedicated flags.
Run directories are resolved against ``$SVSMU_RUN_ROOT`` (default ``./runs``).

Exit codes: 0 ok, 1 usage or configuration error, 2 data error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np
import yaml

from . import dsp, metrics, pitch
from .classifier import ClassifierConfig, greedy_align
from .corpus import CorpusSpec, synth_corpus, write_corpus
from .generator import GeneratorConfig
from .model import ModelConfig, example_from_features, synthesize
from .score import (EmptyScore, InvalidSyllable, MissingFile, NoteTooShort, PhonemeInventory, SchemaViolation,
                    Score, load_manifest)
from .trainer import CheckpointError, NoLabeledData, TrainConfig, fine_tune, load_checkpoint, run

log = logging.getLogger("svsmu")

RUN_ROOT_ENV = "SVSMU_RUN_ROOT"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


DATA_ERRORS = (DataError, MissingFile, SchemaViolation, InvalidSyllable, NoteTooShort, EmptyScore,
               NoLabeledData, CheckpointError, dsp.UnreadableFile, dsp.UnsupportedEncoding, dsp.TooShort,
               FileNotFoundError)

# ---------------------------------------------------------------- configuration

_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} | {"preset"}
DEFAULTS = {
    "data": {"manifest": None, "inventory": None, "labeled_fraction": [1.0], "workers": 1},
    "model": {"preset": "desk", "seed": 0, "classifier": {}, "generator": {}},
    "train": {"preset": "desk"},
    "eval": {"griffin_lim_iters": 60, "align_threshold": 0.5},
    "paths": {"run_dir": "default"},
}
_SECTION_KEYS = {
    "data": set(DEFAULTS["data"]),
    "model": set(DEFAULTS["model"]),
    "train": _TRAIN_KEYS,
    "eval": set(DEFAULTS["eval"]),
    "paths": set(DEFAULTS["paths"]),
}
_NESTED_KEYS = {("model", "classifier"): {f.name for f in fields(ClassifierConfig)} - {"n_phonemes"},
                ("model", "generator"): {f.name for f in fields(GeneratorConfig)} - {"n_phonemes"}}


def _validate(cfg: dict):
    unknown = set(cfg) - set(_SECTION_KEYS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    for sec, allowed in _SECTION_KEYS.items():
        body = cfg.get(sec) or {}
        if not isinstance(body, dict):
            raise ConfigError(f"section {sec!r} must be a mapping")
        bad = set(body) - allowed
        if bad:
            raise ConfigError(f"unknown keys in {sec!r}: {sorted(bad)}")
    for (sec, key), allowed in _NESTED_KEYS.items():
        bad = set(cfg[sec].get(key) or {}) - allowed
        if bad:
            raise ConfigError(f"unknown keys in {sec}.{key}: {sorted(bad)}")
    if cfg["train"].get("preset") not in ("desk", "full"):
        raise ConfigError("train.preset must be 'desk' or 'full'")
    fr = cfg["data"]["labeled_fraction"]
    fr = fr if isinstance(fr, list) else [fr]
    if not fr or any(not isinstance(f, (int, float)) or not 0 < f <= 1 for f in fr):
        raise ConfigError("data.labeled_fraction values must lie in (0, 1]")
    cfg["data"]["labeled_fraction"] = [float(f) for f in fr]


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None, overrides=()) -> dict:
    """Defaults <- YAML file <- ``section.key=value`` overrides; validated."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            doc = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"{p}: {e}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{p}: top level must be a mapping")
        bad = set(doc) - set(_SECTION_KEYS)
        if bad:
            raise ConfigError(f"unknown config sections: {sorted(bad)}")
        cfg = _merge(cfg, doc)
    for item in overrides:
        key, sep, raw = item.partition("=")
        parts = key.split(".")
        if not sep or len(parts) < 2:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        node = cfg
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override inside non-mapping {key!r}")
        node[parts[-1]] = yaml.safe_load(raw)
    _validate(cfg)
    return cfg


def train_config(cfg: dict, mode: str | None = None) -> TrainConfig:
    body = dict(cfg["train"])
    preset = body.pop("preset", "desk")
    if mode is not None:
        body["mode"] = mode
    try:
        return TrainConfig.desk(**body) if preset == "desk" else TrainConfig(**body)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"train: {e}") from None


def model_config(cfg: dict, inventory: PhonemeInventory) -> ModelConfig:
    m = cfg["model"]
    try:
        return ModelConfig.create(inventory, m["preset"], m["seed"], m.get("classifier") or {},
                                  m.get("generator") or {})
    except (TypeError, ValueError) as e:
        raise ConfigError(f"model: {e}") from None


def run_dir(cfg: dict) -> Path:
    rd = Path(cfg["paths"]["run_dir"])
    if not rd.is_absolute():
        rd = Path(os.environ.get(RUN_ROOT_ENV, "runs")) / rd
    rd.mkdir(parents=True, exist_ok=True)
    return rd


def _manifest_path(cfg: dict) -> Path:
    m = cfg["data"]["manifest"]
    if m is None:
        raise ConfigError("data.manifest is not set (use --manifest or the config file)")
    p = Path(m).resolve()
    if not p.exists():
        raise ConfigError(f"manifest not found: {p}")
    cfg["data"]["manifest"] = str(p)
    return p


def _inventory(cfg: dict, manifest: Path) -> PhonemeInventory:
    inv = cfg["data"]["inventory"]
    p = Path(inv).resolve() if inv else manifest.parent / "inventory.txt"
    if not p.exists():
        raise ConfigError(f"phoneme inventory not found: {p}")
    cfg["data"]["inventory"] = str(p)
    return PhonemeInventory.load(p)


def echo_config(cfg: dict, out: Path):
    """Write the fully-resolved config; it is itself a valid ``--config`` file."""
    text = yaml.safe_dump(cfg, sort_keys=True)
    (out / "config.resolved.yaml").write_text(text)
    print(f"resolved config -> {out / 'config.resolved.yaml'}")


def record_artifacts(out: Path, produced: list[Path], command: str):
    path = out / "artifacts.json"
    doc = json.loads(path.read_text()) if path.exists() else {}
    doc[command] = sorted(str(p) for p in produced)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True))


# ---------------------------------------------------------------- prepare

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _extract(args) -> dict:
    entry_id, audio, cache = args
    clip = dsp.load_audio(audio)
    mel = dsp.melspectrogram(clip)
    contour = pitch.estimate_f0(clip)
    dsp.save_mel(cache / f"{entry_id}.mel", mel)
    pitch.save_contour(cache / f"{entry_id}.f0", contour)
    return {"duration": clip.samples.size / clip.sample_rate, "frames": mel.frames.shape[0]}


def cmd_prepare(cfg: dict, out: Path) -> list[Path]:
    manifest = _manifest_path(cfg)
    inventory = _inventory(cfg, manifest)
    entries = load_manifest(manifest, inventory)
    if not entries:
        raise DataError(f"{manifest}: manifest is empty")
    cache = out / "cache"
    cache.mkdir(exist_ok=True)
    index_path = cache / "index.json"
    index = json.loads(index_path.read_text()) if index_path.exists() else {}

    todo, fresh = [], {}
    for e in entries:
        st = e.audio.stat()
        rec = index.get(e.id)
        have = (cache / f"{e.id}.mel").exists() and (cache / f"{e.id}.f0").exists()
        if rec and have and rec["audio"] == str(e.audio):
            if rec["mtime"] == st.st_mtime_ns:
                continue
            digest = _sha256(e.audio)
            if rec["sha256"] == digest:
                rec["mtime"] = st.st_mtime_ns
                continue
        todo.append(e)
        fresh[e.id] = {"audio": str(e.audio), "mtime": st.st_mtime_ns, "sha256": _sha256(e.audio)}

    failures = []
    jobs = [(e.id, e.audio, cache) for e in todo]
    workers = max(1, int(cfg["data"]["workers"]))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_safe_extract, jobs))
    else:
        results = [_safe_extract(j) for j in jobs]
    for e, res in zip(todo, results):
        if isinstance(res, str):
            failures.append(f"{e.audio}: {res}")
            index.pop(e.id, None)
        else:
            index[e.id] = {**fresh[e.id], **res}
    index = {k: v for k, v in index.items() if k in {e.id for e in entries}}
    index_path.write_text(json.dumps(index, indent=1, sort_keys=True))

    print(f"prepared {len(todo) - len(failures)} clip(s), {len(entries) - len(todo)} up to date")
    _print_summary([index[e.id]["duration"] for e in entries if e.id in index])
    if failures:
        for f in failures:
            print(f"error: {f}", file=sys.stderr)
        raise DataError(f"{len(failures)} clip(s) failed")
    return [index_path] + [cache / f"{e.id}{ext}" for e in entries for ext in (".mel", ".f0")]


def _safe_extract(job):
    try:
        return _extract(job)
    except Exception as e:  # reported per file by the caller
        return f"{type(e).__name__}: {e}"


def _print_summary(durations: list[float]):
    d = np.asarray(durations, dtype=float)
    print(f"clips: {d.size}  total: {d.sum():.1f} s  min: {d.min(initial=0):.2f} s  max: {d.max(initial=0):.2f} s")
    edges = [0, 2.5, 5, 7.5, 10, 12, math.inf]
    counts, _ = np.histogram(d, bins=edges)
    for lo, hi, c in zip(edges[:-1], edges[1:], counts):
        label = f"[{lo:>4}, {hi:>4})" if math.isfinite(hi) else f"[{lo:>4},  inf)"
        print(f"  {label} s  {'#' * int(c)} {c}")
    outside = int(((d < 2.5) | (d > 12)).sum())
    if outside:
        print(f"warning: {outside} clip(s) outside the 2.5-12 s range")


# ---------------------------------------------------------------- training

def _labeled_ids(ids: list[str], fraction: float, seed: int) -> set[str]:
    """A seeded, fraction-sized subset; smaller fractions are prefixes of larger ones."""
    order = [ids[i] for i in np.random.default_rng([seed, 11]).permutation(len(ids))]
    return set(order[:max(1, math.ceil(fraction * len(ids)))])


def load_examples(cfg: dict, out: Path, inventory: PhonemeInventory, downsample: int,
                  labeled: set[str] | None = None):
    manifest = _manifest_path(cfg)
    entries = load_manifest(manifest, inventory)
    if not entries:
        raise DataError(f"{manifest}: manifest is empty")
    cache = out / "cache"
    index_path = cache / "index.json"
    index = json.loads(index_path.read_text()) if index_path.exists() else {}
    missing = [e.id for e in entries if e.id not in index]
    if missing:
        raise DataError(f"no prepared features for {missing[:5]} (run `prepare` first)")
    examples = []
    for e in entries:
        mel = dsp.load_mel(cache / f"{e.id}.mel").frames
        contour = pitch.load_contour(cache / f"{e.id}.f0")
        score = e.score if labeled is None or e.id in labeled else None
        examples.append(example_from_features(e.id, mel, contour, e.targets, inventory, score, downsample))
    return examples


def cmd_train(cfg: dict, out: Path, mode: str) -> list[Path]:
    tc = train_config(cfg, mode)
    manifest = _manifest_path(cfg)
    inventory = _inventory(cfg, manifest)
    mc = model_config(cfg, inventory)
    produced = []
    fractions = cfg["data"]["labeled_fraction"] if tc.mode == "semi_supervised" else [None]
    for frac in fractions:
        ids = [e.id for e in load_manifest(manifest, inventory)]
        labeled = _labeled_ids(ids, frac, tc.seed) if frac is not None else None
        examples = load_examples(cfg, out, inventory, mc.downsample, labeled)
        name = f"train_{tc.mode}" + (f"_{int(round(frac * 100)):03d}" if frac is not None else "")
        target = out / name
        print(f"training {tc.mode}" + (f" with {len(labeled)}/{len(ids)} labeled clips" if labeled else "")
              + f" for {tc.total_steps} steps -> {target}")
        t0 = time.time()
        run(tc, examples, mc, out_dir=target)
        print(f"done in {time.time() - t0:.1f} s")
        produced += [target / "model.svsc", target / "loss.csv"]
    return produced


def cmd_finetune(cfg: dict, out: Path, checkpoint: Path, cycles: int) -> list[Path]:
    ckpt = load_checkpoint(checkpoint)
    manifest = _manifest_path(cfg)
    inventory = ckpt.model_config.inventory
    tc = train_config(cfg, "supervised")
    produced = []
    for frac in cfg["data"]["labeled_fraction"]:
        ids = [e.id for e in load_manifest(manifest, inventory)]
        labeled = _labeled_ids(ids, frac, tc.seed)
        examples = load_examples(cfg, out, inventory, ckpt.model_config.downsample, labeled)
        target = out / f"finetune_{int(round(frac * 100)):03d}"
        print(f"fine-tuning on {len(labeled)}/{len(ids)} labeled clips for {cycles} cycle(s) -> {target}")
        fine_tune(ckpt, examples, cycles=cycles, out_dir=target, cfg=tc)
        produced += [target / "model.svsc", target / "loss.csv"]
    return produced


# ---------------------------------------------------------------- inference and plots

def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_synthesis(path: Path, mel: np.ndarray, labels, inventory: PhonemeInventory, title: str = ""):
    """Synthesized mel (left) beside the input score as a pitch/phoneme roll (right)."""
    plt = _plt()
    fig, (a, b) = plt.subplots(1, 2, figsize=(12, 4), constrained_layout=True)
    a.imshow(mel.T, origin="lower", aspect="auto", cmap="magma", vmin=0, vmax=1)
    a.set(title=title or "synthesized mel", xlabel="frame", ylabel="mel bin")
    tok = np.where(labels.pitch_tokens > 0, labels.pitch_tokens, np.nan)
    b.plot(tok, lw=2, color="tab:blue")
    b.set(title="score", xlabel="label frame", ylabel="MIDI")
    prev = None
    for t, pid in enumerate(labels.phoneme_ids):
        if pid != 0 and pid != prev:
            b.annotate(inventory.symbols[pid], (t, labels.pitch_tokens[t]), xytext=(0, 6),
                       textcoords="offset points", fontsize=8)
        prev = pid
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_alignment(path: Path, mel: np.ndarray, probs: np.ndarray, segments: list[dict],
                   inventory: PhonemeInventory, threshold: float):
    """Mel on top, phoneme probabilities below with the above-threshold runs outlined.

    Figure width grows with the number of frames.
    """
    plt = _plt()
    t_ds, v = probs.shape
    width = max(4.0, t_ds / 25.0)
    fig, (a, b) = plt.subplots(2, 1, figsize=(width, 6), sharex=False, constrained_layout=True)
    a.imshow(mel.T, origin="lower", aspect="auto", cmap="magma", vmin=0, vmax=1)
    a.set(title="mel-spectrogram", ylabel="mel bin")
    b.imshow(probs.T, origin="lower", aspect="auto", cmap="Greys", vmin=0, vmax=1, interpolation="nearest")
    b.set_yticks(range(v))
    b.set_yticklabels(inventory.symbols, fontsize=7)
    for s in segments:
        b.add_patch(plt.Rectangle((s["start_frame"] - 0.5, s["phoneme"] - 0.5),
                                  s["end_frame"] - s["start_frame"] + 1, 1, fill=False, ec="tab:red", lw=1.2))
    b.set(title=f"phoneme probability (runs > {threshold:.0%} outlined)", xlabel="frame (downsampled)")
    fig.savefig(path, dpi=100)
    plt.close(fig)


def cmd_infer(cfg: dict, out: Path, checkpoint: Path, score_path: Path, out_wav: Path | None) -> list[Path]:
    ckpt = load_checkpoint(checkpoint)
    model = ckpt.build_model()
    if not score_path.exists():
        raise MissingFile(str(score_path))
    score = Score.load(score_path).validate(model.cfg.inventory)
    clip, mel, labels = synthesize(model, score, iterations=cfg["eval"]["griffin_lim_iters"])
    wav = out_wav or out / f"{score_path.stem}.wav"
    wav.parent.mkdir(parents=True, exist_ok=True)
    dsp.save_audio(wav, clip)
    png = wav.with_suffix(".png")
    plot_synthesis(png, mel, labels, model.cfg.inventory, title=score_path.name)
    print(f"wrote {wav} ({clip.samples.size / clip.sample_rate:.2f} s) and {png}")
    return [wav, png]


def align_clip(model, clip: dsp.AudioClip, threshold: float):
    mel = dsp.melspectrogram(clip).frames
    model.eval()
    probs = model.classifier(mel).numpy()
    return mel, probs, greedy_align(probs, threshold)


def cmd_align(cfg: dict, out: Path, checkpoint: Path, audio: Path, out_json: Path | None) -> list[Path]:
    ckpt = load_checkpoint(checkpoint)
    model = ckpt.build_model()
    inv = model.cfg.inventory
    thr = cfg["eval"]["align_threshold"]
    mel, probs, segs = align_clip(model, dsp.load_audio(audio), thr)
    target = out_json or out / f"{audio.stem}.align.json"
    target.parent.mkdir(parents=True, exist_ok=True)
    rate = dsp.FRAME_RATE / model.cfg.downsample
    doc = {"audio": str(audio), "frame_rate": rate, "threshold": thr,
           "segments": [{**s, "symbol": inv.symbols[s["phoneme"]],
                         "start_s": s["start_frame"] / rate, "end_s": (s["end_frame"] + 1) / rate} for s in segs]}
    target.write_text(json.dumps(doc, indent=1))
    png = target.with_suffix(".png")
    plot_alignment(png, mel, probs, segs, inv, thr)
    print(f"{len(segs)} segment(s): {' '.join(inv.symbols[s['phoneme']] for s in segs)}")
    print(f"wrote {target} and {png}")
    return [target, png]


def evaluate_entries(model, entries, iterations: int = 60, threshold: float = 0.5,
                     bypass_synthesis: bool = False) -> metrics.EvalReport:
    """Per-clip MCD / F0 RMSE against the reference audio and PERS of the reference alignment.

    A clip whose evaluation fails is logged and reported with empty fields.
    """
    report = metrics.EvalReport()
    inv = model.cfg.inventory
    rate_ds = dsp.FRAME_RATE / model.cfg.downsample
    for e in entries:
        row = metrics.ClipMetrics(e.id)
        try:
            ref = e.clip
            syn = ref if bypass_synthesis else synthesize(model, e.score, iterations=iterations)[0]
            row.mcd_db = metrics.mcd(ref, syn)
            try:
                r = metrics.f0_rmse(pitch.estimate_f0(ref), pitch.estimate_f0(syn))
                row.f0_rmse_hz, row.f0_rmse_cents, row.voiced_overlap_ratio = r["hz"], r["cents"], \
                    r["voiced_overlap_ratio"]
            except metrics.NoVoicedOverlap as err:
                log.warning("%s: %s", e.id, err)
                row.voiced_overlap_ratio = 0.0
            _, _, segs = align_clip(model, ref, threshold)
            row.pers_percent = metrics.pers(segs, e.score, inv, rate_ds)
        except Exception as err:  # per-clip failures must not sink the report
            log.error("%s: %s: %s", e.id, type(err).__name__, err)
        report.add(row)
    return report


def cmd_eval(cfg: dict, out: Path, checkpoint: Path, bypass: bool) -> list[Path]:
    ckpt = load_checkpoint(checkpoint)
    model = ckpt.build_model()
    manifest = _manifest_path(cfg)
    entries = [e for e in load_manifest(manifest, model.cfg.inventory) if e.score is not None]
    if not entries:
        raise DataError(f"{manifest}: no entries with scores to evaluate")
    report = evaluate_entries(model, entries, cfg["eval"]["griffin_lim_iters"], cfg["eval"]["align_threshold"],
                              bypass)
    js, cs = out / "eval_report.json", out / "eval_report.csv"
    report.save_json(js)
    report.save_csv(cs)
    agg = report.aggregate()
    print("  ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in agg.items()))
    print(f"wrote {js} and {cs}")
    return [js, cs]


def cmd_synth_corpus(out_dir: Path, n_clips: int, seed: int, phonemes: list[str]) -> list[Path]:
    items, inv = synth_corpus(CorpusSpec(n_clips=n_clips, phonemes=tuple(phonemes), seed=seed))
    manifest = write_corpus(items, inv, out_dir)
    print(f"wrote {len(items)} clip(s) and {manifest}")
    return [manifest]


# ---------------------------------------------------------------- argument parsing

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="svsmu", description=__doc__.split("\n\n")[0],
                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, manifest=False):
        sp.add_argument("--config", type=Path, help="YAML run configuration")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config value (repeatable)")
        sp.add_argument("--run-dir", help=f"run directory (relative paths resolve under ${RUN_ROOT_ENV})")
        if manifest:
            sp.add_argument("--manifest", type=Path, help="JSONL manifest")

    sp = sub.add_parser("prepare", help="extract and cache mel and F0 features")
    common(sp, manifest=True)
    sp.add_argument("--workers", type=int, help="parallel feature-extraction processes")

    sp = sub.add_parser("train", help="train from scratch")
    common(sp, manifest=True)
    sp.add_argument("--mode", choices=("unsupervised", "supervised", "semi_supervised"))
    sp.add_argument("--steps-per-cycle", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--labeled-fraction", type=float, action="append",
                    help="fraction of clips with scores for semi_supervised (repeatable)")

    sp = sub.add_parser("finetune", help="supervised fine-tuning of a checkpoint on labeled clips")
    common(sp, manifest=True)
    sp.add_argument("--checkpoint", type=Path, required=True)
    sp.add_argument("--cycles", type=int, default=1)
    sp.add_argument("--steps-per-cycle", type=int)
    sp.add_argument("--labeled-fraction", type=float, action="append")

    sp = sub.add_parser("infer", help="synthesize audio from a score")
    common(sp)
    sp.add_argument("--checkpoint", type=Path, required=True)
    sp.add_argument("--score", type=Path, required=True)
    sp.add_argument("--out", type=Path, help="output WAV (default: <run dir>/<score>.wav)")

    sp = sub.add_parser("align", help="phoneme probabilities and alignment for an audio clip")
    common(sp)
    sp.add_argument("--checkpoint", type=Path, required=True)
    sp.add_argument("--audio", type=Path, required=True)
    sp.add_argument("--out", type=Path, help="output JSON (default: <run dir>/<audio>.align.json)")

    sp = sub.add_parser("eval", help="MCD, F0 RMSE and PERS over a manifest")
    common(sp, manifest=True)
    sp.add_argument("--checkpoint", type=Path, required=True)
    sp.add_argument("--bypass-synthesis", action="store_true",
                    help="compare references with themselves (harness check)")

    sp = sub.add_parser("synth-corpus", help="render a synthetic singing corpus")
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--n-clips", type=int, default=8)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--phonemes", default="a,i,u,s,k", help="comma-separated inventory (BLANK is implicit)")
    return p


def _resolve(args) -> dict:
    over = list(args.set)
    if getattr(args, "run_dir", None):
        over.append(f"paths.run_dir={json.dumps(args.run_dir)}")
    if getattr(args, "manifest", None):
        over.append(f"data.manifest={json.dumps(str(args.manifest))}")
    if getattr(args, "workers", None):
        over.append(f"data.workers={args.workers}")
    if getattr(args, "steps_per_cycle", None):
        over.append(f"train.steps_per_cycle={args.steps_per_cycle}")
    if getattr(args, "seed", None) is not None:
        over.append(f"train.seed={args.seed}")
    if getattr(args, "mode", None):
        over.append(f"train.mode={args.mode}")
    if getattr(args, "labeled_fraction", None):
        over.append(f"data.labeled_fraction={json.dumps(args.labeled_fraction)}")
    return load_config(args.config, over)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(message)s", stream=sys.stdout)
    try:
        if args.command == "synth-corpus":
            phonemes = [s for s in args.phonemes.split(",") if s]
            if not phonemes:
                raise ConfigError("--phonemes must name at least one symbol")
            cmd_synth_corpus(args.out, args.n_clips, args.seed, phonemes)
            return EXIT_OK
        cfg = _resolve(args)
        out = run_dir(cfg)
        if args.command in ("prepare", "train", "finetune", "eval"):
            _manifest_path(cfg)
        if args.command == "prepare":
            produced = cmd_prepare(cfg, out)
        elif args.command == "train":
            produced = cmd_train(cfg, out, cfg["train"].get("mode"))
        elif args.command == "finetune":
            produced = cmd_finetune(cfg, out, args.checkpoint, args.cycles)
        elif args.command == "infer":
            produced = cmd_infer(cfg, out, args.checkpoint, args.score, args.out)
        elif args.command == "align":
            produced = cmd_align(cfg, out, args.checkpoint, args.audio, args.out)
        else:
            produced = cmd_eval(cfg, out, args.checkpoint, args.bypass_synthesis)
        echo_config(cfg, out)
        record_artifacts(out, produced, args.command)
        return EXIT_OK
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as e:
        print(f"data error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DATA
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as e:
        log.debug("traceback", exc_info=True)
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
