"""Cosine similarity between the two quaternion slot inputs across training.

Layer 0 is the language branch (learnable context against the projected
domain feature); the others are the vision-branch layers (language prompt
against the projected domain feature). The summary column is the mean
absolute per-layer value.

Run: python3 demos/05_orthogonality_trace.py [seed]
"""
import sys

import numpy as np

from gdpl.harness.episode import EpisodeConfig, train_episode

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
rep = train_episode(EpisodeConfig(seed=seed)).report

trace = np.array(rep.cos_trace)
print("epoch  " + "  ".join(f"layer{k}" for k in range(trace.shape[1])) + "   mean|cos|     HM")
for e, row in enumerate(trace):
    print(f"{e:5d}  " + "  ".join(f"{v:+6.3f}" for v in row) + f"   {rep.mean_cos_sim[e]:9.3f}  {rep.metrics[e]['hm']:6.2f}")

# random 64-d vectors are already close to orthogonal, so the interesting
# quantity is how far training moves them away from or towards zero
drift = rep.mean_cos_sim[-1] - rep.mean_cos_sim[1]
print(f"\nchange from epoch 1 to the last epoch: {drift:+.3f}")
