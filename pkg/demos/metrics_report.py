"""
Evaluation metrics
==================

Each metric on small hand-built cases, ending with a JSON/CSV report.
"""
import tempfile
from pathlib import Path

from svsmu import metrics, pitch
from svsmu.corpus import CorpusSpec, synth_corpus

items, inv = synth_corpus(CorpusSpec(n_clips=2, seed=4))
a, b = items
print(f"MCD a vs a: {metrics.mcd(a.clip, a.clip):.3f} dB")
print(f"MCD a vs b: {metrics.mcd(a.clip, b.clip):.3f} dB")

ref = pitch.estimate_f0(a.clip)
sharp = pitch.PitchContour(ref.f0_hz * 2 ** (20 / 1200), ref.voiced, ref.frame_rate)
r = metrics.f0_rmse(ref, sharp)
print(f"20 cents sharp: {r['hz']:.2f} Hz RMSE, {r['cents']:.1f} cents")

# a perfect alignment built from the score itself, then one with a vowel swapped
good = []
for note, (s, e) in zip(a.score.notes, metrics.note_windows(a.score)):
    good.append({"phoneme": note.phonemes[-1], "start_frame": s, "end_frame": e - 1})
bad = [dict(seg, phoneme="i" if seg["phoneme"] != "i" else "a") if k == 0 else seg
       for k, seg in enumerate(good)]
print(f"PERS perfect: {metrics.pers(good, a.score):.1f}%, one vowel wrong: {metrics.pers(bad, a.score):.1f}%")

rep = metrics.EvalReport()
for it in items:
    rep.add(metrics.ClipMetrics(it.id, mcd_db=metrics.mcd(a.clip, it.clip), pers_percent=0.0))
out = Path(tempfile.mkdtemp())
rep.save_json(out / "report.json")
rep.save_csv(out / "report.csv")
print((out / "report.csv").read_text())
print("aggregate:", {k: (round(v, 3) if isinstance(v, float) else v) for k, v in rep.aggregate().items()})
