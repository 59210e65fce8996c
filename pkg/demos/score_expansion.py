"""
From a musical score to frame labels
====================================

A score is a list of notes, each with a syllable. Expansion lays the syllable
out on the 100 fps label clock: consonants get one frame at the note edges and
vowels share the rest. Collapsing the frame labels gives back the CTC target.
"""
from svsmu.score import Note, PhonemeInventory, Score, collapse, expand_score, targets_from_score

inv = PhonemeInventory.from_symbols(["a", "e", "i", "k", "s", "t"], vowels=["a", "e", "i"])
score = Score([
    Note(0.00, 0.10, 60, ("k", "a", "t")),
    Note(0.12, 0.08, 62, ("s", "e")),
    Note(0.20, 0.06, 64, ("a", "i")),
])

lab = expand_score(score, inv)
print("frame  phoneme  pitch  note")
for i, (p, m, n) in enumerate(zip(lab.phoneme_ids, lab.pitch_tokens, lab.note_index)):
    print(f"{i:5d}  {inv.symbols[p]:>7s}  {m:5d}  {n:4d}")

targets = targets_from_score(score, inv)
print("CTC target:", [inv.symbols[t] for t in targets])
print("collapsed frames:", [inv.symbols[t] for t in collapse(lab.phoneme_ids, lab.slots)])
