"""
Unsupervised training: lyrics and audio, no timing
==================================================

Trains classifier and generator jointly from audio plus the phoneme sequence
of each clip (no note timing), then reads out the greedy alignment and scores
it against the true score with PERS.

Expect a high PERS on this 8-clip corpus. Short runs are still dominated by
the blank symbol; after a few thousand steps the classifier tends to hold one
phoneme through voiced frames and squeeze the others into silent gaps. The
script prints the alignment so the behaviour is easy to see.
"""
import sys

import numpy as np

from svsmu.classifier import greedy_align
from svsmu.corpus import CorpusSpec, synth_corpus
from svsmu.metrics import note_windows, pers
from svsmu.model import ModelConfig, prepare_example
from svsmu.trainer import TrainConfig, run

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 900
items, inv = synth_corpus(CorpusSpec(n_clips=8, seed=0))
exs = [prepare_example(it.id, it.clip, it.targets, inv) for it in items]  # no scores

cfg = TrainConfig.desk(mode="unsupervised", steps_per_cycle=max(steps // 3, 60), log_every=150)
ckpt = run(cfg, exs, ModelConfig.create(inv))
model = ckpt.build_model()
model.eval()

scores, blanks = [], []
for it, ex in zip(items, exs):
    probs = model.classifier(ex.mel).probs.data
    blanks.append(probs[ex.voiced, 0].mean())
    scores.append(pers(greedy_align(probs), it.score, inv))

first = items[0]
probs = model.classifier(exs[0].mel).probs.data
print("true notes (frames):", [("".join(n.phonemes), w) for n, w in zip(first.score.notes, note_windows(first.score))])
print("greedy segments:   ", [(inv.symbols[s["phoneme"]], s["start_frame"], s["end_frame"])
                              for s in greedy_align(probs)])
print(f"PERS {np.mean(scores):.1f}%, blank probability on voiced frames {np.mean(blanks):.3f}")
