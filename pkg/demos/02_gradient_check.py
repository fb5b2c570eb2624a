"""Finite-difference check of every trainable group in a micro model.

The micro model has width 8, two encoder layers, one prompted layer and
rank-2 adapters with nonzero alpha, so every path carries gradient.

Run: python3 demos/02_gradient_check.py
"""
from gdpl import diagnostics

result = diagnostics.gradcheck()
for name, err in sorted(result.detail.items(), key=lambda kv: -kv[1]):
    print(f"{name:14s} max relative error {err:.2e}")
print(f"\nworst {result.value:.2e} in {result.seconds:.1f}s:", "ok" if result.passed else "FAILED")

for r in diagnostics.run_oracles():
    print(r.line())
