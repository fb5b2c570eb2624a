"""Self-checks: gradient check of a micro model and algebraic oracle suites.

Each check returns a small result record so the command line, the tests and
the demo scripts all run the exact same code.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .encoders import DomainEncoder, EncoderConfig, TextEncoder, VisionEncoder, encode_domain
from .model import GDPLConfig, GDPLModel, cross_modal_update
from .quatnet import Quaternion, hamilton_product, quaternion_to_matrix, random_quaternions

GRADCHECK_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float
    seconds: float
    detail: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value < self.tolerance)

    def line(self) -> str:
        return (f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.value:.3e} "
                f"(tol {self.tolerance:.0e}, {self.seconds:.2f}s)")


# ---------------------------------------------------------------------------
# gradient check
# ---------------------------------------------------------------------------
MICRO = EncoderConfig(width=8, depth=2, heads=2, patch=8, image=16, embed_dim=8, max_len=12)


def micro_model(seed: int = 0) -> tuple[GDPLModel, np.ndarray, np.ndarray, list[int], np.ndarray]:
    """Width 8, two layers, prompt depth 1, rank 2, three classes, batch of two 16x16 images.

    α and M_c are moved away from their neutral initial values so every
    gradient path is exercised.
    """
    rng = np.random.default_rng(seed)
    vis, txt = VisionEncoder(MICRO, rng), TextEncoder(MICRO, rng)
    dom = DomainEncoder(MICRO, rng).freeze()
    model = GDPLModel(vis, txt, dom, GDPLConfig(n_ctx=2, depth=1, rank=2), rng)
    lo = model.lora
    for a in lo.alpha_l + lo.alpha_v:
        a.data = rng.normal(0, 0.3, size=a.shape)
    lo.m_c.data = np.eye(2) + rng.normal(0, 0.1, size=(2, 2))
    images = rng.standard_normal((2, 16, 16))
    labels = np.array([0, 2])
    class_ids = [0, 1, 2]
    return model, images, labels, class_ids, encode_domain(dom, images)


def gradcheck(seed: int = 0, h: float = 1e-5) -> CheckResult:
    """Central-difference check of every trainable parameter group of the micro model."""
    t0 = time.perf_counter()
    model, images, labels, class_ids, f_d = micro_model(seed)

    def objective():
        # the noise stream is re-seeded so every evaluation sees the same draw
        return model.loss(images, labels, class_ids, f_d, training=True, rng=np.random.default_rng(seed + 1))

    per_group = {}
    for group, params in model.parameter_groups().items():
        per_group[group] = float(max(nc.gradient_errors(objective, params, h)))
    worst = max(per_group.values())
    return CheckResult("gradcheck", worst, GRADCHECK_TOL, time.perf_counter() - t0, per_group)


# ---------------------------------------------------------------------------
# algebraic oracles
# ---------------------------------------------------------------------------
def hamilton_matrix_oracle(n: int = 1000, seed: int = 0) -> CheckResult:
    """p ⊗ q against the left-multiplication matrix of p applied to q."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    ps, qs = random_quaternions(rng, n), random_quaternions(rng, n)
    err = max(float(np.max(np.abs(hamilton_product(p, q).as_array() - quaternion_to_matrix(p) @ q.as_array())))
              for p, q in zip(ps, qs))
    return CheckResult("hamilton-vs-matrix", err, 1e-12, time.perf_counter() - t0)


def homomorphism_oracle(n: int = 1000, seed: int = 1) -> CheckResult:
    """M(p)M(q) = M(p ⊗ q) and |p ⊗ q| = |p||q|."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    ps, qs = random_quaternions(rng, n), random_quaternions(rng, n)
    hom = norm = 0.0
    for p, q in zip(ps, qs):
        pq = hamilton_product(p, q)
        hom = max(hom, float(np.max(np.abs(quaternion_to_matrix(p) @ quaternion_to_matrix(q)
                                           - quaternion_to_matrix(pq)))))
        norm = max(norm, abs(pq.norm() - p.norm() * q.norm()))
    return CheckResult("homomorphism-and-norm", max(hom, norm), 1e-10, time.perf_counter() - t0,
                       {"homomorphism": hom, "norm": norm})


def low_rank_oracle(seed: int = 0, width: int = 64, depth: int = 4, rank: int = 4) -> CheckResult:
    """Singular values past the rank of every shift operator, with random (nonzero) factors."""
    from .model import LoRAAdapter

    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    lo = LoRAAdapter(depth - 1, width, rank, rng)
    for p in lo.alpha_l + lo.alpha_v + lo.lam_l + lo.lam_v:
        p.data = rng.standard_normal(p.shape)
    lo.m_c.data = rng.standard_normal((2, 2))
    tail = 0.0
    for layer in range(lo.n_layers):
        for branch in ("l", "v"):
            s = np.linalg.svd(lo.shift_operator(layer, branch), compute_uv=False)
            tail = max(tail, float(s[rank:].max()))
    return CheckResult("shift-operator-rank", tail, 1e-10, time.perf_counter() - t0)


def lora_neutrality_oracle(seed: int = 0) -> CheckResult:
    """Zero α gives the adapter-free forward; identity M_c leaves both diagonals untouched."""
    t0 = time.perf_counter()
    model, images, _, class_ids, f_d = micro_model(seed)
    for a in model.lora.alpha_l + model.lora.alpha_v:
        a.data = np.zeros_like(a.data)
    model.lora.m_c.data = np.eye(2)
    with nc.no_grad():
        with_lora = model.logits(images, class_ids, f_d).data
        lora, model.lora = model.lora, None
        without = model.logits(images, class_ids, f_d).data
        model.lora = lora
        l2, v2 = cross_modal_update(lora.lam_l[0], lora.lam_v[0], lora.m_c)
    fwd = float(np.max(np.abs(with_lora - without)))
    mix = max(float(np.max(np.abs(l2.data - lora.lam_l[0].data))), float(np.max(np.abs(v2.data - lora.lam_v[0].data))))
    return CheckResult("lora-neutrality", max(fwd, mix), 1e-12, time.perf_counter() - t0,
                       {"forward": fwd, "mixing": mix})


def run_oracles(seed: int = 0) -> list[CheckResult]:
    return [hamilton_matrix_oracle(seed=seed), homomorphism_oracle(seed=seed + 1),
            low_rank_oracle(seed=seed), lora_neutrality_oracle(seed=seed)]


def unit_quaternion_roundtrip(q: Quaternion) -> float:
    """|q ⊗ q̄ - 1| for a quaternion scaled to unit norm."""
    u = Quaternion.from_array(q.as_array() / q.norm())
    conj = Quaternion(u.r, -u.x, -u.y, -u.z)
    return float(np.max(np.abs((u * conj).as_array() - np.array([1.0, 0, 0, 0]))))
