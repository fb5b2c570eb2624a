"""Full model against the two ablations over several seeds.

no-quat replaces the quaternion layers by plain feature addition; no-lora
turns the cross-modal low-rank adapters off. All variants share the frozen
base and, for a given seed, the same data stream.

Run: python3 demos/04_ablation.py [n_seeds]   (about 35 s per episode)
"""
import sys

import numpy as np

from gdpl.harness.episode import EpisodeConfig, pretrain_base, train_episode
from gdpl.harness.metrics import average_rows

n_seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 5
variants = {"full": {}, "no-quat": {"quat_enabled": False}, "no-lora": {"lora_enabled": False}}
base = pretrain_base()

results = {}
for name, flags in variants.items():
    reps = [train_episode(EpisodeConfig(seed=s, **flags), base=base).report for s in range(n_seeds)]
    results[name] = reps
    print(f"{name:8s} HM per seed", " ".join(f"{r.hm:6.2f}" for r in reps))

print("\nvariant   mean base  mean novel  mean HM  HM of means")
for name, reps in results.items():
    avg = average_rows((r.acc_base, r.acc_novel) for r in reps)
    print(f"{name:8s}  {np.mean([r.acc_base for r in reps]):9.2f}  {np.mean([r.acc_novel for r in reps]):10.2f}"
          f"  {avg['mean_of_hm']:7.2f}  {avg['hm_of_means']:11.2f}")
