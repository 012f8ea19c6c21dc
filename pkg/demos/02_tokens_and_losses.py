"""Motion tokens and the four training losses on a confidently wrong prediction.

Run: python3 demos/02_tokens_and_losses.py
"""
import numpy as np

from noisesim.losses import loss_ce, loss_focal, loss_label_smoothing, loss_symmetric_ce
from noisesim.synth import CorpusRecipe, synthesize_corpus
from noisesim.tokenizer import build_vocab, decode, encode, extract_deltas

# %% vocabulary from 40 synthetic scenarios
scs, rmap = synthesize_corpus(CorpusRecipe(n_scenarios=40, seed=1))
deltas = extract_deltas(scs)
vocab = build_vocab(deltas, 512, 0.25)
print(f"{len(deltas)} half-second deltas -> {vocab.size} templates, radius {vocab.coverage_radius} m")
print("longest template step: %.1f m" % np.hypot(*vocab.templates[:, :2].T).max())

# %% a track survives the round trip within the radius per step
track = scs[0].tracks[0]
tokens = encode(track, vocab)
rebuilt = decode(track.state(0), tokens, vocab)
err = np.linalg.norm(rebuilt[::5, :2] - track.xy[::5], axis=1)
print(f"tokens {tokens[:6]}..., endpoint drift after 9 s: {err[-1]:.2f} m")

# %% losses: right answer (index 0) vs a confident wrong one (index 1)
C = 512
for label, logits in (("confident right", np.r_[8.0, np.zeros(C - 1)]),
                      ("confident wrong", np.r_[0.0, 8.0, np.zeros(C - 2)])):
    row = {
        "ce": loss_ce(logits, 0)[0],
        "ls": loss_label_smoothing(logits, 0, 0.1)[0],
        "focal": loss_focal(logits, 0, 2.0)[0],
        "sce": loss_symmetric_ce(logits, 0)[0],
    }
    print(f"{label:16s} " + "  ".join(f"{k} {v:7.4f}" for k, v in row.items()))
