"""Synthetic multi-domain texture benchmark.

Each class is an oriented grating with its own (frequency, angle). Images get
bounded random phase, small parameter jitter, random contrast and pixel noise. A
domain-shifted style applies one fixed global transform per domain: a
spectral gain field, a contrast squash and an additive background pattern.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from ..encoders import caption_tokens

IMAGE = 32


@dataclass(frozen=True)
class ClassSpec:
    class_id: int
    frequency: float  # cycles per image
    angle: float  # degrees


def class_universe(family: str = "grating") -> list[ClassSpec]:
    """Fixed ordered class list shared by every domain of a texture family."""
    if family == "grating":
        freqs = (2.0, 3.5, 5.0)
        angles = (0.0, 45.0, 90.0, 135.0)
        offset = 0
    elif family == "fine":
        # disjoint textures with their own class tokens
        freqs = (6.5, 8.0)
        angles = (22.5, 67.5, 112.5, 157.5)
        offset = 12
    else:
        raise ValueError(f"unknown texture family {family!r}")
    specs = []
    # interleave angles so the first classes cover all orientations
    for fi, f in enumerate(freqs):
        for ai, a in enumerate(angles):
            specs.append(ClassSpec(offset + fi * len(angles) + ai, f, a))
    return specs


@dataclass
class SyntheticDataset:
    domain_id: int
    style: str
    classes: list[ClassSpec]
    images: np.ndarray  # [n, 32, 32]
    labels: np.ndarray  # class ids, [n]
    family: str = "grating"
    captions: np.ndarray = field(init=False)

    def __post_init__(self):
        self.captions = caption_tokens(self.labels) if len(self.labels) else np.zeros((0, 4), int)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def class_ids(self) -> list[int]:
        return [c.class_id for c in self.classes]

    def subset(self, idx) -> "SyntheticDataset":
        idx = np.asarray(idx, dtype=int)
        keep = set(np.unique(self.labels[idx]).tolist())
        return SyntheticDataset(self.domain_id, self.style, [c for c in self.classes if c.class_id in keep],
                                self.images[idx], self.labels[idx], self.family)

    def digest(self) -> str:
        h = hashlib.sha256(self.images.tobytes())
        h.update(self.labels.astype(np.int64).tobytes())
        return h.hexdigest()


def render_grating(rng: np.random.Generator, spec: ClassSpec, noise: float = 0.35) -> np.ndarray:
    y, x = np.mgrid[0:IMAGE, 0:IMAGE] / IMAGE
    f = spec.frequency * (1.0 + 0.04 * rng.standard_normal())
    th = np.deg2rad(spec.angle + 4.0 * rng.standard_normal())
    phase = rng.uniform(-1.2, 1.2)
    contrast = rng.uniform(0.7, 1.3)
    img = contrast * np.sin(2 * np.pi * f * (x * np.cos(th) + y * np.sin(th)) + phase)
    return img + noise * rng.standard_normal((IMAGE, IMAGE))


@dataclass(frozen=True)
class DomainTransform:
    """Deterministic global transform for one domain id (>= 1)."""

    domain_id: int

    def _fields(self):
        rng = np.random.default_rng(10_000 + self.domain_id)
        fy = np.fft.fftfreq(IMAGE)[:, None]
        fx = np.fft.fftfreq(IMAGE)[None, :]
        rad = np.hypot(fx, fy)
        ang = np.arctan2(fy, fx)
        # smooth anisotropic band gain; symmetric under f -> -f so the output stays real
        a1, a2 = rng.uniform(0, np.pi, size=2)
        gain = (0.35 + 1.6 * np.exp(-((rad - rng.uniform(0.08, 0.16)) / 0.06) ** 2)
                * (0.6 + 0.4 * np.cos(2 * (ang - a1))) + 0.3 * np.cos(4 * (ang - a2)) * (rad > 0))
        gain = np.abs(gain)
        gain[0, 0] = 1.0
        raw = rng.standard_normal((IMAGE, IMAGE))
        smooth = np.real(np.fft.ifft2(np.fft.fft2(raw) * np.exp(-(rad / 0.05) ** 2)))
        pattern = smooth / smooth.std()
        return gain, pattern

    def __call__(self, images: np.ndarray) -> np.ndarray:
        gain, pattern = self._fields()
        spec = np.fft.fft2(images, axes=(-2, -1)) * gain
        filtered = np.real(np.fft.ifft2(spec, axes=(-2, -1)))
        return 0.8 * np.tanh(1.2 * filtered) + 0.7 * pattern


def generate_dataset(seed: int, n_classes: int, per_class: int, style: str = "shifted",
                     domain_id: int = 1, family: str = "grating", noise: float = 0.35) -> SyntheticDataset:
    """Deterministic in ``seed``; images are grouped by class in class order."""
    universe = class_universe(family)
    if n_classes < 2:
        raise ValueError(f"need at least 2 classes, got {n_classes}")
    if n_classes > len(universe):
        raise ValueError(f"family {family!r} has only {len(universe)} classes")
    if per_class < 1:
        raise ValueError(f"per_class must be >= 1, got {per_class}")
    if style not in ("natural", "shifted"):
        raise ValueError(f"style must be 'natural' or 'shifted', got {style!r}")
    rng = np.random.default_rng(seed)
    classes = universe[:n_classes]
    imgs = np.stack([render_grating(rng, c, noise) for c in classes for _ in range(per_class)])
    labels = np.repeat([c.class_id for c in classes], per_class)
    if style == "shifted":
        imgs = DomainTransform(domain_id)(imgs)
    else:
        domain_id = 0
    return SyntheticDataset(domain_id, style, classes, imgs, labels, family)


@dataclass
class Splits:
    base_train: SyntheticDataset
    base_test: SyntheticDataset
    novel_test: SyntheticDataset
    base_classes: list[int]
    novel_classes: list[int]


def split_base_novel(dataset: SyntheticDataset, n_base: int, n_novel: int, shots: int = 16,
                     rng: np.random.Generator | None = None) -> Splits:
    """First ``n_base`` classes are base, the next ``n_novel`` novel.

    Base classes contribute ``shots`` training images each (drawn at random when
    ``rng`` is given, else the first ones) and the rest go to the base test
    split. Every image of a novel class goes to the novel test split.
    """
    if shots < 1:
        raise ValueError(f"shots must be >= 1, got {shots}")
    ids = dataset.class_ids
    if n_base < 1 or n_novel < 1 or n_base + n_novel > len(ids):
        raise ValueError(f"cannot split {len(ids)} classes into {n_base} base + {n_novel} novel")
    base, novel = ids[:n_base], ids[n_base:n_base + n_novel]
    train_idx, test_idx, novel_idx = [], [], []
    for c in base:
        idx = np.flatnonzero(dataset.labels == c)
        if len(idx) <= shots:
            raise ValueError(f"class {c} has {len(idx)} images, need more than {shots} shots")
        if rng is not None:
            idx = rng.permutation(idx)
        train_idx.extend(idx[:shots])
        test_idx.extend(np.sort(idx[shots:]))
    for c in novel:
        novel_idx.extend(np.flatnonzero(dataset.labels == c))
    return Splits(dataset.subset(train_idx), dataset.subset(test_idx), dataset.subset(novel_idx),
                  list(base), list(novel))


def nearest_centroid_accuracy(train: SyntheticDataset, test: SyntheticDataset) -> float:
    """Nearest-centroid classifier in raw pixel space, accuracy in percent."""
    def feat(imgs):
        return imgs.reshape(len(imgs), -1)

    ids = np.unique(train.labels)
    ft = feat(train.images)
    cents = np.stack([ft[train.labels == c].mean(axis=0) for c in ids])
    fq = feat(test.images)
    d = ((fq[:, None, :] - cents[None]) ** 2).sum(-1)
    return 100.0 * float(np.mean(ids[np.argmin(d, axis=1)] == test.labels))
