"""
CTC loss, the unvoice penalty and greedy alignment
==================================================

Optimises free per-frame logits toward a short target twice: with plain CTC
and with the unvoice penalty added. Plain CTC is happy to put blanks inside a
voiced region; the penalty pushes those frames toward real phonemes.
"""
import numpy as np

from svsmu import tensor as T
from svsmu.classifier import ctc_loss, greedy_align, unvoice_penalty

symbols = ["<blank>", "a", "i", "u"]
target = [1, 2, 3]
voiced = np.array([0, 1, 1, 1, 1, 1, 1, 1, 1, 0], bool)


def fit(penalty: bool, steps=300, lr=0.5):
    with T.precision("float64"):
        w = T.Parameter(np.zeros((len(voiced), len(symbols))))
        w.data[:, 0] = 2.0  # start blank-heavy, as an untrained classifier tends to
        for _ in range(steps):
            w.grad = None
            lp = T.log_softmax(w)
            loss = ctc_loss(lp, target)
            if penalty:
                loss = T.add(loss, unvoice_penalty(T.softmax(w), voiced))
            T.backward(loss)
            w.data -= lr * w.grad
        return np.exp(T.log_softmax(w).data)


for name, pen in [("CTC only", False), ("CTC + unvoice penalty", True)]:
    p = fit(pen)
    print(f"{name}: mean blank probability on voiced frames {p[voiced, 0].mean():.3f}")
    print("  argmax:", " ".join(symbols[k][0] if k else "_" for k in p.argmax(1)))
    print("  segments:", [(symbols[s["phoneme"]], s["start_frame"], s["end_frame"])
                          for s in greedy_align(p)])
