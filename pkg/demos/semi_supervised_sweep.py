"""
How much melody supervision helps
=================================

Trains four ways on the same synthetic corpus and compares held-out MCD:
semi-supervised with 25% of clips labelled, supervised on those 25% only,
semi-supervised with every clip labelled, and fully unsupervised. The
acceptance suite runs the same comparison over three seeds.
"""
import sys
import time

import numpy as np

from svsmu.corpus import CorpusSpec, synth_corpus
from svsmu.metrics import mcd
from svsmu.model import ModelConfig, prepare_example, synthesize
from svsmu.trainer import TrainConfig, run

cycle = int(sys.argv[1]) if len(sys.argv) > 1 else 150
items, inv = synth_corpus(CorpusSpec(n_clips=12, seed=100))
train, held = items[:8], items[8:]

runs = [("semi 25%", "semi_supervised", 2), ("supervised-only 25%", "supervised", 2),
        ("semi 100%", "semi_supervised", 8), ("unsupervised", "unsupervised", 0)]
for name, mode, n_lab in runs:
    t0 = time.time()
    exs = [prepare_example(it.id, it.clip, it.targets, inv, it.score if k < n_lab else None)
           for k, it in enumerate(train)]
    if mode == "supervised":
        exs = exs[:n_lab]
    ckpt = run(TrainConfig.desk(mode=mode, steps_per_cycle=cycle, log_every=0), exs, ModelConfig.create(inv))
    model = ckpt.build_model()
    model.eval()
    score = np.mean([mcd(it.clip, synthesize(model, it.score)[0]) for it in held])
    print(f"{name:<22s} held-out MCD {score:6.2f} dB  ({time.time() - t0:.0f} s)")
