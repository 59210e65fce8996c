"""
Mel features and F0 pseudo-labels
=================================

Renders a sung vowel and extracts its 80-bin log-mel spectrogram. The F0
estimate becomes the MIDI tokens and voiced mask used during training.
Writes ``features_and_pitch.png`` next to this script.
"""
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from svsmu import dsp, pitch
from svsmu.corpus import render_vowel

f0 = pitch.midi_to_hz(64)
samples, _ = render_vowel(f0, "a", int(0.8 * dsp.SAMPLE_RATE))
silence = np.zeros(int(0.2 * dsp.SAMPLE_RATE), dtype=np.float32)
clip = dsp.AudioClip(np.concatenate([silence, samples, silence]).astype(np.float32))

mel = dsp.melspectrogram(clip)
print("mel frames:", mel.frames.shape, "range", mel.frames.min().round(3), mel.frames.max().round(3))

contour = pitch.estimate_f0(clip)
voiced = contour.f0_hz[contour.voiced]
print(f"true F0 {f0:.1f} Hz, median estimate {np.median(voiced):.1f} Hz, "
      f"{contour.voiced.mean():.0%} of frames voiced")

tokens = pitch.quantize_contour(contour, 2)
mask = pitch.voiced_mask(contour, 2)
print("tokens at 100 fps:", np.unique(tokens[mask]), "rest blocks:", int((~mask).sum()))

# Griffin-Lim brings the mel back to audio; a decent inversion keeps the pitch
back = dsp.invert_mel(mel, iterations=60)
est = pitch.estimate_f0(back)
print(f"pitch after mel inversion: {np.median(est.f0_hz[est.voiced]):.1f} Hz")

fig, ax = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
ax[0].imshow(mel.frames.T, origin="lower", aspect="auto")
ax[0].set_ylabel("mel bin")
ax[1].plot(np.where(contour.voiced, contour.f0_hz, np.nan))
ax[1].set_ylabel("F0 (Hz)")
ax[1].set_xlabel("frame (200 fps)")
out = Path(__file__).with_suffix(".png")
fig.savefig(out, dpi=100)
print("wrote", out)
