"""Train a TopK sparse autoencoder and check what it learned.

Exactly k of K concepts fire on every row, and on noiseless data the
decoder columns line up with the planted dictionary far better than
random directions would.
"""

import numpy as np

from ccg.sae import SaeTrainConfig, encode, l0_rate, train_sae
from ccg.synth import SynthConfig, dictionary_match_score, generate, random_direction_baseline

gt = generate(SynthConfig(n_examples=1000, seed=0))
model, log = train_sae(gt.activations, SaeTrainConfig(epochs=20))
c = encode(gt.activations, model)
print(f"mse {log[0].mse:.4f} -> {log[-1].mse:.4f} over {len(log)} epochs")
print(f"active per row: {c.astype(bool).sum(1).min()}..{c.astype(bool).sum(1).max()}  "
      f"l0 rate {l0_rate(c) * 256:.1f}/256")

clean = generate(SynthConfig(m=128, dict_dim=64, dag_density=0.0, hub_count=0,
                             concept_sparsity=6, noise_sigma=0.0, n_examples=4000, seed=7))
model, _ = train_sae(clean.activations, SaeTrainConfig(n_concepts=128, k=6, epochs=30))
print(f"dictionary match {dictionary_match_score(model, clean.dictionary):.3f} vs "
      f"random {random_direction_baseline(64, 128, 128, np.random.default_rng(0)):.3f}")
