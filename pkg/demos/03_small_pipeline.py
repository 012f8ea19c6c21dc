"""Miniature end-to-end run: noisy training, clean evaluation, results table.

A few minutes on one core. The acceptance suite runs the full-size version.
Run: python3 demos/03_small_pipeline.py
"""
from noisesim.losses import LossSpec
from noisesim.metrics import MetricsConfig, evaluate
from noisesim.noise import NoiseConfig, corrupt, drop_unobserved
from noisesim.report import results_table
from noisesim.rollout import ConstantSpeedPolicy, IdmPolicy, LearnedPolicy
from noisesim.synth import CorpusRecipe, synthesize_corpus
from noisesim.tokenizer import build_vocab, extract_deltas
from noisesim.training import TrainConfig, build_samples, train_on_samples

scs, rmap = synthesize_corpus(CorpusRecipe(n_scenarios=150, seed=4))
noise = NoiseConfig(jitter_sigma_xy=0.1, jitter_sigma_heading=0.01, dropout_rate=0.05, occlusion_rate=0.3,
                    fragmentation_rate=0.05)
noisy = [drop_unobserved(corrupt(s, noise)) if s.split != "test" else s for s in scs]
train_items = [(s, rmap) for s in noisy if s.split == "train"]
val_items = [(s, rmap) for s in noisy if s.split == "val"]
test_items = [(s, rmap) for s in scs if s.split == "test"]

vocab = build_vocab(extract_deltas([s for s, _ in train_items]))
train_set, val_set = build_samples(train_items, vocab), build_samples(val_items, vocab)
print(f"{len(train_set)} training pairs, {len(val_set)} validation pairs, {len(test_items)} clean test scenarios")

metrics = MetricsConfig(k_rollouts=16)
rows = [("IDM", evaluate(test_items, IdmPolicy(), metrics)),
        ("Constant speed", evaluate(test_items, ConstantSpeedPolicy(), metrics))]
for label, spec in (("CE", LossSpec("ce")), ("Focal", LossSpec("focal"))):
    params, log = train_on_samples(train_set, val_set, vocab.size, spec, TrainConfig(epochs=4))
    print(f"{label}: val loss {log[0]['val_loss']:.3f} -> {min(r['val_loss'] for r in log):.3f}")
    rows.append((label, evaluate(test_items, LearnedPolicy(params, vocab), metrics)))
print()
print(results_table(rows))
