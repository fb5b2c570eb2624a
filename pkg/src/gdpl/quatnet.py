"""Quaternion algebra and quaternion-valued linear layers.

A quaternion layer holds four real weight blocks (W_r, W_x, W_y, W_z) and
computes the Hamilton product ``W ⊗ Q`` block-wise, each block product being an
ordinary matrix product over the feature width. Activations are applied to
each of the four output components separately.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numcore as nc
from .numcore import Module, ShapeError, Tensor


@dataclass(frozen=True)
class Quaternion:
    r: float
    x: float
    y: float
    z: float

    @classmethod
    def from_array(cls, a) -> "Quaternion":
        a = np.asarray(a, dtype=float)
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    def as_array(self) -> np.ndarray:
        return np.array([self.r, self.x, self.y, self.z])

    def norm(self) -> float:
        return float(np.sqrt(self.r ** 2 + self.x ** 2 + self.y ** 2 + self.z ** 2))

    def is_unit(self, tol: float = 1e-12) -> bool:
        return abs(self.norm() - 1.0) <= tol

    def __mul__(self, other: "Quaternion") -> "Quaternion":
        return hamilton_product(self, other)


def _hamilton(r1, x1, y1, z1, r2, x2, y2, z2):
    return (
        r1 * r2 - x1 * x2 - y1 * y2 - z1 * z2,
        r1 * x2 + x1 * r2 + y1 * z2 - z1 * y2,
        r1 * y2 - x1 * z2 + y1 * r2 + z1 * x2,
        r1 * z2 + x1 * y2 - y1 * x2 + z1 * r2,
    )


def quaternion_to_matrix(q: Quaternion) -> np.ndarray:
    """Left-multiplication matrix: ``quaternion_to_matrix(p) @ q.as_array() == (p ⊗ q).as_array()``."""
    r, x, y, z = q.r, q.x, q.y, q.z
    return np.array([
        [r, -x, -y, -z],
        [x, r, -z, y],
        [y, z, r, -x],
        [z, -y, x, r],
    ])


class QuatFeature:
    """A batch of quaternion features stored as four real blocks of equal shape."""

    def __init__(self, r: Tensor, i: Tensor, j: Tensor, k: Tensor):
        blocks = [nc.as_tensor(b) for b in (r, i, j, k)]
        shapes = {b.shape for b in blocks}
        if len(shapes) != 1:
            raise ShapeError(f"quaternion blocks must share a shape, got {[b.shape for b in blocks]}")
        self.r, self.i, self.j, self.k = blocks

    @property
    def blocks(self) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        return self.r, self.i, self.j, self.k

    @property
    def shape(self) -> tuple[int, ...]:
        return self.r.shape

    @property
    def width(self) -> int:
        return self.r.shape[-1]


def hamilton_product(q1, q2):
    """Hamilton product of two Quaternions, or elementwise over two QuatFeatures."""
    if isinstance(q1, Quaternion) and isinstance(q2, Quaternion):
        return Quaternion(*_hamilton(q1.r, q1.x, q1.y, q1.z, q2.r, q2.x, q2.y, q2.z))
    if isinstance(q1, QuatFeature) and isinstance(q2, QuatFeature):
        if q1.shape != q2.shape:
            raise ShapeError(f"hamilton_product: feature shapes {q1.shape} and {q2.shape} differ")
        return QuatFeature(*_hamilton(*q1.blocks, *q2.blocks))
    raise TypeError("hamilton_product needs two Quaternions or two QuatFeatures")


# ---------------------------------------------------------------------------
# slot patterns
# ---------------------------------------------------------------------------
_PATTERN_RE = re.compile(r"^\[?\s*([ab*])\s*,\s*([ab*])\s*,\s*([ab*])\s*,\s*([ab*])\s*\]?$")


@dataclass(frozen=True)
class SlotPattern:
    """Which of the (r, i, j, k) slots hold input ``a``, input ``b`` and zeros."""

    assignment: tuple[str, str, str, str]

    def __post_init__(self):
        a = tuple(self.assignment)
        if len(a) != 4 or sorted(a) != ["*", "*", "a", "b"]:
            raise ValueError(f"slot pattern must place a, b and two zeros, got {a}")
        object.__setattr__(self, "assignment", a)

    @classmethod
    def parse(cls, text: str) -> "SlotPattern":
        m = _PATTERN_RE.match(text.strip())
        if not m:
            raise ValueError(f"cannot parse slot pattern {text!r}; expected e.g. '[a,b,*,*]'")
        return cls(tuple(m.groups()))

    def slot_of(self, name: str) -> int:
        return self.assignment.index(name)

    def __str__(self) -> str:
        return "[" + ",".join(self.assignment) + "]"


DEFAULT_PATTERN = SlotPattern(("a", "b", "*", "*"))
ALL_PATTERNS = tuple(SlotPattern.parse(p) for p in
                     ("[a,b,*,*]", "[*,*,a,b]", "[a,*,*,b]", "[a,*,b,*]", "[*,a,*,b]", "[*,a,b,*]"))


def pack_slots(a: Tensor, b: Tensor, pattern: SlotPattern = DEFAULT_PATTERN) -> QuatFeature:
    a, b = nc.as_tensor(a), nc.as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"pack_slots: inputs have shapes {a.shape} and {b.shape}")
    zero = Tensor(np.zeros(a.shape))
    slots = [a if s == "a" else b if s == "b" else zero for s in pattern.assignment]
    return QuatFeature(*slots)


def extract_context(q_out: QuatFeature) -> Tensor:
    """Real-valued output of a quaternion prompt layer: its r component."""
    return q_out.r


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------
_ACTIVATIONS = {"relu": nc.relu, "gelu": nc.gelu, "identity": lambda t: t}


class QuatLinear(Module):
    """Quaternion-valued weight ``W = W_r + W_x i + W_y j + W_z k`` with blocks of shape [d_out, d_in]."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator | None = None,
                 act: str = "relu", init: str = "uniform"):
        if act not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {act!r}")
        self.act = act
        self.d_in, self.d_out = d_in, d_out
        if init == "identity":
            if d_in != d_out:
                raise ShapeError("identity init needs d_in == d_out")
            blocks = [np.eye(d_in)] + [np.zeros((d_out, d_in)) for _ in range(3)]
        else:
            rng = rng if rng is not None else np.random.default_rng(0)
            s = 1.0 / np.sqrt(4 * d_in)
            blocks = [rng.uniform(-s, s, size=(d_out, d_in)) for _ in range(4)]
        self.w_r, self.w_x, self.w_y, self.w_z = (nc.parameter(b) for b in blocks)

    @property
    def weights(self) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        return self.w_r, self.w_x, self.w_y, self.w_z

    def __call__(self, q: QuatFeature) -> QuatFeature:
        return quat_linear_forward(self, q)


def quat_linear_forward(layer: QuatLinear, q: QuatFeature) -> QuatFeature:
    if q.width != layer.d_in:
        raise ShapeError(f"quaternion layer expects width {layer.d_in}, got {q.width}")
    # each term "W_a * q_b" is q_b @ W_a^T over the feature width
    wt = [w.transpose() for w in layer.weights]
    prod = [[qb @ wa for qb in q.blocks] for wa in wt]  # prod[a][b] = W_a q_b
    (rr, rx, ry, rz), (xr, xx, xy, xz), (yr, yx, yy, yz), (zr, zx, zy, zz) = prod
    out_r = rr - xx - yy - zz
    out_i = rx + xr + yz - zy
    out_j = ry - xz + yr + zx
    out_k = rz + xy - yx + zr
    f = _ACTIVATIONS[layer.act]
    return QuatFeature(f(out_r), f(out_i), f(out_j), f(out_k))


def dense_equivalent(layer: QuatLinear) -> np.ndarray:
    """Real [4*d_out, 4*d_in] matrix acting on stacked (r, i, j, k) inputs."""
    wr, wx, wy, wz = (w.data for w in layer.weights)
    return np.block([
        [wr, -wx, -wy, -wz],
        [wx, wr, -wz, wy],
        [wy, wz, wr, -wx],
        [wz, -wy, wx, wr],
    ])


def quaternion_prompt(layer: QuatLinear, a: Tensor, b: Tensor, pattern: SlotPattern = DEFAULT_PATTERN) -> Tensor:
    """pack → quaternion layer → r component."""
    return extract_context(quat_linear_forward(layer, pack_slots(a, b, pattern)))


def random_quaternions(rng: np.random.Generator, n: int) -> list[Quaternion]:
    return [Quaternion.from_array(v) for v in rng.standard_normal((n, 4))]


def stack_components(qs: Sequence[Quaternion]) -> np.ndarray:
    return np.stack([q.as_array() for q in qs])
