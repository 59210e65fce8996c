"""
Supervised training and synthesis
=================================

Trains the generator on score labels from a small synthetic corpus, then
sings a held-out score. The F0 of the result is checked against
the notes and the audio is written to ``supervised_synthesis.wav``.

About two minutes on one CPU core. Pass a step count to change that.
"""
import sys
import time
from pathlib import Path

import numpy as np

from svsmu import dsp, metrics, pitch
from svsmu.corpus import CorpusSpec, synth_corpus
from svsmu.model import ModelConfig, prepare_example, synthesize
from svsmu.trainer import TrainConfig, run

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 1200
items, inv = synth_corpus(CorpusSpec(n_clips=9, seed=3))
train, held = items[:8], items[8]
exs = [prepare_example(it.id, it.clip, it.targets, inv, it.score) for it in train]

t0 = time.time()
cfg = TrainConfig.desk(mode="supervised", steps_per_cycle=max(steps // 3, 60), log_every=200)
ckpt = run(cfg, exs, ModelConfig.create(inv))
print(f"{ckpt.step} steps in {time.time() - t0:.0f} s, final L_G {ckpt.trace[-1]['L_G']:.4f}")

model = ckpt.build_model()
model.eval()
audio, mel, labels = synthesize(model, held.score)
out = Path(__file__).with_suffix(".wav")
dsp.save_audio(out, audio)
print("wrote", out, f"({audio.duration:.2f} s)")

c = pitch.estimate_f0(audio)
print("note  target  sung (median MIDI)")
for note in held.score.notes:
    a, b = int((note.onset + 0.03) * c.frame_rate), int((note.onset + note.duration - 0.03) * c.frame_rate)
    v = c.voiced[a:b]
    sung = np.median(pitch.hz_to_midi(c.f0_hz[a:b][v])) if v.any() else float("nan")
    print(f"{''.join(note.phonemes):>4s}  {note.midi:6d}  {sung:6.2f}")
print(f"held-out MCD {metrics.mcd(held.clip, audio):.2f} dB")
