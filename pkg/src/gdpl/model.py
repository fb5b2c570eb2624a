"""Domain prompt learning over a frozen dual encoder.

Language branch: learnable context vectors and domain features F̂_d are placed
on two quaternion axes, mixed by a quaternion layer, and the r component is
used as the context T_d in front of each category's token embeddings.
Learnable language prompts are injected into the first ``depth`` text layers.

Vision branch: for each prompted layer the language prompt and F̂_d go through
their own quaternion layer to give the vision prompt of that layer.

Cross-modal low-rank adaptation: every layer from the second on adds
``β diag(Λ̂) α`` applied to its input tokens, where the language and vision
diagonals are re-mixed by one shared 2x2 matrix before use.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numcore as nc
from .encoders import (DomainEncoder, DomainProjection, TextEncoder, VisionEncoder, caption_tokens,
                       encode_domain)
from .numcore import Module, ShapeError, Tensor
from .quatnet import DEFAULT_PATTERN, QuatLinear, SlotPattern, quaternion_prompt


@dataclass(frozen=True)
class GDPLConfig:
    n_ctx: int = 2
    depth: int = 3
    pattern: SlotPattern = DEFAULT_PATTERN
    rank: int = 4
    tau: float = 0.07
    use_quat: bool = True
    use_lora: bool = True
    ctx_init_std: float = 0.02

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")
        if self.n_ctx < 1 or self.depth < 0 or self.rank < 1:
            raise ValueError("n_ctx >= 1, depth >= 0 and rank >= 1 are required")


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------
class PromptState(Module):
    """Context vectors E_c, language prompts P_l^1..P_l^k, quaternion layers and the domain projection."""

    def __init__(self, cfg: GDPLConfig, width: int, d_dom: int, rng: np.random.Generator):
        self.ctx = nc.parameter(rng.normal(0, cfg.ctx_init_std, size=(cfg.n_ctx, width)))
        self.lang_prompts = [nc.parameter(rng.normal(0, cfg.ctx_init_std, size=(cfg.n_ctx, width)))
                             for _ in range(cfg.depth)]
        self.projection = DomainProjection(d_dom, width, rng)
        if cfg.use_quat:
            self.q_text = QuatLinear(width, width, rng)
            self.q_vision = [QuatLinear(width, width, rng) for _ in range(cfg.depth)]
        else:
            self.q_text = None
            self.q_vision = []


class LoRAAdapter(Module):
    """Per-layer (β, Λ-diagonal, α) for both branches, layers 2..m, plus the shared 2x2 matrix M_c."""

    def __init__(self, n_layers: int, width: int, rank: int, rng: np.random.Generator, beta_std: float = 0.1):
        if rank >= width:
            raise ValueError(f"rank {rank} must be below width {width}")
        self.beta_l, self.lam_l, self.alpha_l = [], [], []
        self.beta_v, self.lam_v, self.alpha_v = [], [], []
        for _ in range(n_layers):
            for beta, lam, alpha in ((self.beta_l, self.lam_l, self.alpha_l),
                                     (self.beta_v, self.lam_v, self.alpha_v)):
                beta.append(nc.parameter(rng.normal(0, beta_std, size=(width, rank))))
                lam.append(nc.parameter(np.ones(rank)))
                alpha.append(nc.parameter(np.zeros((rank, width))))
        self.m_c = nc.parameter(np.eye(2))

    @property
    def n_layers(self) -> int:
        return len(self.beta_l)

    def shift_operator(self, layer: int, branch: str) -> np.ndarray:
        """Dense ``β diag(Λ̂) α`` for one layer (index 0 = encoder layer 2) and branch 'l' or 'v'."""
        lam_l, lam_v = cross_modal_update(self.lam_l[layer], self.lam_v[layer], self.m_c)
        if branch == "l":
            beta, lam, alpha = self.beta_l[layer], lam_l, self.alpha_l[layer]
        else:
            beta, lam, alpha = self.beta_v[layer], lam_v, self.alpha_v[layer]
        return beta.data @ np.diag(lam.data) @ alpha.data


# ---------------------------------------------------------------------------
# language branch
# ---------------------------------------------------------------------------
def domain_noise(f_hat: Tensor, rng: np.random.Generator, n_ctx: int) -> Tensor:
    """N_G = Mean(F̂_d) · N_θ per image, shape [B, n_ctx, d]."""
    b, d = f_hat.shape
    scale = nc.mean(f_hat, axis=1).reshape(b, 1, 1)
    return scale * Tensor(rng.standard_normal((b, n_ctx, d)))


def _check_finite(t: Tensor, what: str) -> None:
    if not np.isfinite(t.data).all():
        raise FloatingPointError(f"{what} contains non-finite values")


def slot_inputs(context: Tensor, f_hat: Tensor) -> tuple[Tensor, Tensor]:
    """Broadcast [n, d] context and [B, d] domain features to two [B, n, d] quaternion slot inputs."""
    b, d = f_hat.shape
    n = context.shape[-2]
    if context.shape[-1] != d:
        raise ShapeError(f"context width {context.shape[-1]} != domain feature width {d}")
    a = context if context.ndim == 3 else nc.broadcast_to(context, (b, n, d))
    fb = nc.broadcast_to(f_hat.reshape(b, 1, d), (b, n, d))
    return a, fb


def gen_language_context(ctx: Tensor, f_hat: Tensor, q_text: QuatLinear | None,
                         pattern: SlotPattern = DEFAULT_PATTERN, training: bool = False,
                         rng: np.random.Generator | None = None) -> Tensor:
    """Domain-specific context T_d, shape [B, n_ctx, d].

    The context side (E_c, plus N_G while training) fills slot ``a`` and F̂_d
    fills slot ``b``. Without a quaternion layer the two are simply summed.
    """
    _check_finite(f_hat, "domain features")
    a, b = slot_inputs(ctx, f_hat)
    if training and rng is not None:
        a = a + domain_noise(f_hat, rng, ctx.shape[0])
    if q_text is None:
        return a + b
    return quaternion_prompt(q_text, a, b, pattern)


def build_language_input(t_d: Tensor, c_t: Tensor) -> Tensor:
    """[T_d ; C_t] for every (image, category) pair: [B, n_ctx, d] x [C, L, d] -> [B*C, n_ctx+L, d]."""
    if t_d.shape[-1] != c_t.shape[-1]:
        raise ShapeError(f"context width {t_d.shape[-1]} != category embedding width {c_t.shape[-1]}")
    b, n, d = t_d.shape
    c, length, _ = c_t.shape
    t = nc.broadcast_to(t_d.reshape(b, 1, n, d), (b, c, n, d)).reshape(b * c, n, d)
    ct = nc.broadcast_to(c_t, (b, c, length, d)).reshape(b * c, length, d)
    return nc.concat([t, ct], axis=1)


# ---------------------------------------------------------------------------
# shared propagation
# ---------------------------------------------------------------------------
def lora_shift(e_i: Tensor, e_prev: Tensor, beta: Tensor, lam_hat: Tensor, alpha: Tensor) -> Tensor:
    """Ê_i = E_i + β diag(Λ̂) α E_prev, applied at every token position."""
    if e_prev.shape[-1] != alpha.shape[1] or e_i.shape[-1] != beta.shape[0]:
        raise ShapeError(f"low-rank shift {beta.shape}x{alpha.shape} does not fit tokens {e_prev.shape}->{e_i.shape}")
    if lam_hat.shape != (alpha.shape[0],) or beta.shape[1] != alpha.shape[0]:
        raise ShapeError(f"rank mismatch: beta {beta.shape}, diag {lam_hat.shape}, alpha {alpha.shape}")
    z = (e_prev @ alpha.transpose()) * lam_hat
    return e_i + z @ beta.transpose()


def cross_modal_update(lam_l: Tensor, lam_v: Tensor, m_c: Tensor) -> tuple[Tensor, Tensor]:
    """Stack the two diagonals as a 2xV matrix, left-multiply by M_c, unstack."""
    if lam_l.shape != lam_v.shape or lam_l.ndim != 1:
        raise ShapeError(f"diagonal shapes differ: {lam_l.shape} vs {lam_v.shape}")
    v = lam_l.shape[0]
    mixed = m_c @ nc.concat([lam_l.reshape(1, v), lam_v.reshape(1, v)], axis=0)
    return mixed[0], mixed[1]


@dataclass
class LayerShift:
    beta: Tensor
    lam_hat: Tensor
    alpha: Tensor


def propagate(x0: Tensor, prompts: Sequence[Tensor], blocks, shifts: Sequence[LayerShift] | None = None) -> Tensor:
    """Run ``blocks`` over ``x0`` with deep prompts.

    For layers 1..k (k = len(prompts)) the prompt slots are replaced by the
    given prompt before the layer runs; for later layers whatever the previous
    layer emitted in those slots flows through. ``shifts[i-2]`` is added at
    layer i >= 2.
    """
    k = len(prompts)
    if k >= len(blocks):
        raise ValueError(f"prompt depth {k} must be below the number of layers {len(blocks)}")
    bsz, base_len, d = x0.shape
    x = x0
    for i, blk in enumerate(blocks, start=1):
        if i <= k:
            p = prompts[i - 1]
            if p.ndim == 2:
                p = nc.broadcast_to(p, (bsz,) + p.shape)
            e = x if i == 1 else x[:, :base_len]
            x_in = nc.concat([e, p], axis=1)
        else:
            x_in = x
        y = blk(x_in)
        if shifts is not None and i >= 2:
            s = shifts[i - 2]
            y = lora_shift(y, x_in, s.beta, s.lam_hat, s.alpha)
        x = y
    return x


def propagate_language(e1: Tensor, lang_prompts: Sequence[Tensor], text: TextEncoder,
                       shifts: Sequence[LayerShift] | None = None) -> Tensor:
    """Sentence embeddings [N, D] read at the last category token of [T_d ; C_t]."""
    out = propagate(e1, lang_prompts, text.blocks, shifts)
    return text.head(out, e1.shape[1] - 1)


def gen_vision_prompts(lang_prompts: Sequence[Tensor], f_hat: Tensor, q_vision: Sequence[QuatLinear] | None,
                       pattern: SlotPattern = DEFAULT_PATTERN) -> list[Tensor]:
    """P_v^i from P_l^i (slot a) and F̂_d (slot b); no noise on this branch."""
    out = []
    for i, p in enumerate(lang_prompts):
        a, b = slot_inputs(p, f_hat)
        if q_vision is None:
            out.append(a + b)
            continue
        if i >= len(q_vision):
            raise ValueError(f"no vision quaternion layer for prompted layer {i + 1}")
        out.append(quaternion_prompt(q_vision[i], a, b, pattern))
    return out


def propagate_vision(images: np.ndarray, vision_prompts: Sequence[Tensor], vision: VisionEncoder,
                     shifts: Sequence[LayerShift] | None = None) -> Tensor:
    """Visual embeddings [B, D] read from the class token after the last layer."""
    e, c = vision.embed(images)
    out = propagate(nc.concat([e, c], axis=1), vision_prompts, vision.blocks, shifts)
    return vision.head(out)


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------
def similarity_logits(img: Tensor, txt: Tensor, tau: float) -> Tensor:
    """cos(image, text_c)/τ for image [B, D] against per-image texts [B, C, D] (or shared [C, D])."""
    if np.any(np.linalg.norm(img.data, axis=-1) == 0) or np.any(np.linalg.norm(txt.data, axis=-1) == 0):
        raise ValueError("cannot classify with a zero-norm embedding")
    b, dim = img.shape
    if txt.ndim == 2:
        txt = nc.broadcast_to(txt, (b,) + txt.shape)
    c = txt.shape[1]
    im = nc.broadcast_to(img.reshape(b, 1, dim), (b, c, dim))
    return nc.cosine_similarity(im, txt) * (1.0 / tau)


def classify(img: Tensor, txt: Tensor, tau: float = 0.07) -> Tensor:
    """p(y_c | x) = softmax_c(cos(E^v, E^{l,c}) / τ), shape [B, C]."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    return nc.softmax(similarity_logits(img, txt, tau), axis=-1)


def contrastive_loss(probs: Tensor, labels) -> Tensor:
    """Mean negative log-probability of the true class."""
    labels = np.asarray(labels, dtype=int)
    b, c = probs.shape
    if labels.shape != (b,) or labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"labels must be {b} indices in [0, {c}), got {labels}")
    picked = probs[np.arange(b), labels]
    return nc.mean(nc.log(picked)) * -1.0


# ---------------------------------------------------------------------------
# full model
# ---------------------------------------------------------------------------
@dataclass
class ForwardTrace:
    """Quaternion-layer slot inputs seen in one forward pass (for the orthogonality trace)."""
    pairs: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)


class GDPLModel:
    """Frozen dual encoder + frozen domain encoder + trainable prompt-side parameters."""

    def __init__(self, vision: VisionEncoder, text: TextEncoder, domain: DomainEncoder,
                 cfg: GDPLConfig, rng: np.random.Generator):
        if cfg.depth >= len(vision.blocks) or cfg.depth >= len(text.blocks):
            raise ValueError(f"prompt depth {cfg.depth} must be below encoder depth {len(vision.blocks)}")
        if not domain.frozen:
            raise RuntimeError("domain encoder must be frozen")
        self.vision, self.text, self.domain = vision, text, domain
        vision.requires_grad_(False)
        text.requires_grad_(False)
        self.cfg = cfg
        width = vision.cfg.width
        self.prompts = PromptState(cfg, width, domain.cfg.width, rng)
        self.lora = LoRAAdapter(len(vision.blocks) - 1, width, cfg.rank, rng) if cfg.use_lora else None
        self._feature_cache: dict[int, np.ndarray] = {}

    # -- parameters ---------------------------------------------------------
    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = self.prompts.named_parameters("prompts.")
        if self.lora is not None:
            out += self.lora.named_parameters("lora.")
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def parameter_groups(self) -> dict[str, list[Tensor]]:
        groups: dict[str, list[Tensor]] = {}
        for name, p in self.named_parameters():
            scope, key = name.split(".")[:2]
            if scope == "lora" and key != "m_c":
                key = key.split("_")[0]
            groups.setdefault(key, []).append(p)
        return groups

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for n, p in self.named_parameters():
            if n not in state:
                raise KeyError(f"missing tensor {n}")
            if state[n].shape != p.shape:
                raise ShapeError(f"{n}: stored {state[n].shape} vs {p.shape}")
            p.data = np.array(state[n], dtype=float)

    # -- forward ------------------------------------------------------------
    def domain_features(self, images: np.ndarray) -> np.ndarray:
        return encode_domain(self.domain, images)

    def shifts(self) -> tuple[list[LayerShift] | None, list[LayerShift] | None]:
        if self.lora is None:
            return None, None
        lang, vis = [], []
        lo = self.lora
        for i in range(lo.n_layers):
            lam_l, lam_v = cross_modal_update(lo.lam_l[i], lo.lam_v[i], lo.m_c)
            lang.append(LayerShift(lo.beta_l[i], lam_l, lo.alpha_l[i]))
            vis.append(LayerShift(lo.beta_v[i], lam_v, lo.alpha_v[i]))
        return lang, vis

    def embeddings(self, images: np.ndarray, class_ids: Sequence[int], f_d: np.ndarray | None = None,
                   training: bool = False, rng: np.random.Generator | None = None,
                   trace: ForwardTrace | None = None) -> tuple[Tensor, Tensor]:
        """Image embeddings [B, D] and per-image category embeddings [B, C, D]."""
        cfg, ps = self.cfg, self.prompts
        if f_d is None:
            f_d = self.domain_features(images)
        f_hat = ps.projection(Tensor(f_d))
        t_d = gen_language_context(ps.ctx, f_hat, ps.q_text, cfg.pattern, training, rng)
        p_v = gen_vision_prompts(ps.lang_prompts, f_hat, ps.q_vision if cfg.use_quat else None, cfg.pattern)
        if trace is not None:
            trace.pairs.append((ps.ctx.data, f_hat.data))
            trace.pairs.extend((p.data, f_hat.data) for p in ps.lang_prompts)
        shifts_l, shifts_v = self.shifts()
        c_t = self.text.embed_tokens(caption_tokens(class_ids))
        e1 = build_language_input(t_d, c_t)
        txt = propagate_language(e1, ps.lang_prompts, self.text, shifts_l)
        b, c = len(images), len(class_ids)
        txt = txt.reshape(b, c, txt.shape[-1])
        img = propagate_vision(images, p_v, self.vision, shifts_v)
        return img, txt

    def logits(self, images, class_ids, f_d=None, training=False, rng=None) -> Tensor:
        img, txt = self.embeddings(images, class_ids, f_d, training, rng)
        return similarity_logits(img, txt, self.cfg.tau)

    def probabilities(self, images, class_ids, f_d=None, training=False, rng=None) -> Tensor:
        return nc.softmax(self.logits(images, class_ids, f_d, training, rng), axis=-1)

    def loss(self, images, labels, class_ids, f_d=None, training=True, rng=None) -> Tensor:
        """Contrastive classification loss; ``labels`` are indices into ``class_ids``."""
        return contrastive_loss(self.probabilities(images, class_ids, f_d, training, rng), labels)

    def predict(self, images, class_ids, f_d=None, batch: int = 24) -> np.ndarray:
        """Index into ``class_ids`` of the most probable category, no noise, no graph."""
        if f_d is None:
            f_d = self.domain_features(images)
        out = []
        with nc.no_grad():
            for s in range(0, len(images), batch):
                out.append(np.argmax(self.logits(images[s:s + batch], class_ids, f_d[s:s + batch]).data, axis=1))
        return np.concatenate(out) if out else np.zeros(0, dtype=int)
