"""Quaternion algebra and the quaternion layer, step by step.

Run: python3 demos/01_quaternion_algebra.py
"""
import numpy as np

from gdpl.numcore import Tensor
from gdpl.quatnet import (ALL_PATTERNS, QuatLinear, Quaternion, dense_equivalent, pack_slots,
                          quaternion_prompt, quaternion_to_matrix)

# basis units multiply the way Hamilton wrote them: ij = k, ji = -k
i, j = Quaternion(0, 1, 0, 0), Quaternion(0, 0, 1, 0)
print("i*j =", (i * j).as_array(), " j*i =", (j * i).as_array())

# the product is a matrix-vector product with the left factor's 4x4 matrix
rng = np.random.default_rng(0)
p, q = Quaternion.from_array(rng.standard_normal(4)), Quaternion.from_array(rng.standard_normal(4))
print("p*q         ", (p * q).as_array())
print("M(p) @ q    ", quaternion_to_matrix(p) @ q.as_array())
print("|pq|-|p||q| ", (p * q).norm() - p.norm() * q.norm())

# a quaternion layer is a structured real layer 4x the size with shared weights
layer = QuatLinear(3, 2, rng, act="identity")
w = dense_equivalent(layer)
print("\ndense equivalent of a 3->2 quaternion layer:", w.shape,
      "with", sum(b.data.size for b in layer.weights), "free parameters instead of", w.size)

# two feature vectors go in two slots, the rest are zero
a = Tensor(rng.standard_normal((1, 3)))
b = Tensor(rng.standard_normal((1, 3)))
for pattern in ALL_PATTERNS:
    blocks = [blk.data.round(2).tolist()[0] for blk in pack_slots(a, b, pattern).blocks]
    print(f"{str(pattern):12s}", blocks)

# the prompt is the real block of the layer output
out = quaternion_prompt(QuatLinear(3, 3, rng), a, b)
print("\nprompt from (a, b):", out.data.round(4))
