"""Toy dual encoder, frozen domain encoder and the trainable domain projection.

All encoders are small pre-norm transformers over 8x8 patches of 32x32
single-channel images (vision) or over a 64-symbol vocabulary (text). They are
pretrained once (contrastively for the dual encoder, by masked-patch
reconstruction for the domain encoder) and then frozen.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .numcore import Module, ShapeError, Tensor

VOCAB_SIZE = 64
TEMPLATE = (0, 1, 2)  # "a", "photo", "of"
FIRST_CLASS_TOKEN = len(TEMPLATE)


def caption_tokens(class_ids) -> np.ndarray:
    """Token ids of "a photo of <class>" for each class id, shape [C, 4]."""
    ids = np.atleast_1d(np.asarray(class_ids, dtype=int))
    tok = FIRST_CLASS_TOKEN + ids
    if ids.min() < 0 or tok.max() >= VOCAB_SIZE:
        raise ValueError(f"class ids must map into the {VOCAB_SIZE}-symbol vocabulary, got {ids}")
    return np.concatenate([np.tile(TEMPLATE, (len(ids), 1)), tok[:, None]], axis=1)


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------
class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True, scale: float | None = None):
        s = scale if scale is not None else 1.0 / np.sqrt(d_in)
        self.weight = nc.parameter(rng.normal(0.0, s, size=(d_in, d_out)))
        self.bias = nc.parameter(np.zeros(d_out)) if bias else None
        self.d_in, self.d_out = d_in, d_out

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ShapeError(f"linear layer expects width {self.d_in}, got input shape {x.shape}")
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gamma = nc.parameter(np.ones(d))
        self.beta = nc.parameter(np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return nc.layer_norm(x, self.gamma, self.beta)


class Attention(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        if d % heads:
            raise ValueError(f"width {d} not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.out = Linear(d, d, rng, scale=0.5 / np.sqrt(d))

    def __call__(self, x: Tensor) -> Tensor:
        b, t, d = x.shape
        h, dh = self.heads, d // self.heads

        def split(z):
            return z.reshape(b, t, h, dh).transpose(0, 2, 1, 3)

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        att = nc.softmax((q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh)), axis=-1)
        y = (att @ v).transpose(0, 2, 1, 3).reshape(b, t, d)
        return self.out(y)


class Block(Module):
    """Pre-norm transformer block: attention then a GELU MLP, each with a residual."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator, mlp_ratio: int = 2):
        self.ln1 = LayerNorm(d)
        self.attn = Attention(d, heads, rng)
        self.ln2 = LayerNorm(d)
        self.fc1 = Linear(d, mlp_ratio * d, rng)
        self.fc2 = Linear(mlp_ratio * d, d, rng, scale=0.5 / np.sqrt(mlp_ratio * d))

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.fc2(nc.gelu(self.fc1(self.ln2(x))))


def run_blocks(blocks, x: Tensor) -> Tensor:
    for blk in blocks:
        x = blk(x)
    return x


@dataclass(frozen=True)
class EncoderConfig:
    width: int = 64
    depth: int = 4
    heads: int = 2
    patch: int = 8
    image: int = 32
    embed_dim: int = 64
    max_len: int = 16

    @property
    def num_patches(self) -> int:
        return (self.image // self.patch) ** 2


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """[B, H, W] -> [B, (H/p)*(W/p), p*p] in row-major patch order."""
    images = np.asarray(images, dtype=float)
    if images.ndim == 2:
        images = images[None]
    b, hgt, wid = images.shape
    if hgt % patch or wid % patch:
        raise ShapeError(f"image extent {hgt}x{wid} is not divisible by patch size {patch}")
    gh, gw = hgt // patch, wid // patch
    x = images.reshape(b, gh, patch, gw, patch).transpose(0, 1, 3, 2, 4)
    return x.reshape(b, gh * gw, patch * patch)


# ---------------------------------------------------------------------------
# encoders
# ---------------------------------------------------------------------------
class VisionEncoder(Module):
    """Token layout per image: [patch_1 .. patch_N, class, prompts...]."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        d = cfg.width
        self.patch_embed = Linear(cfg.patch * cfg.patch, d, rng)
        self.class_token = nc.parameter(rng.normal(0, 0.02, size=d))
        self.pos = nc.parameter(rng.normal(0, 0.02, size=(cfg.num_patches + 1, d)))
        self.blocks = [Block(d, cfg.heads, rng) for _ in range(cfg.depth)]
        self.ln_post = LayerNorm(d)
        self.proj = nc.parameter(rng.normal(0, 1.0 / np.sqrt(d), size=(d, cfg.embed_dim)))

    def embed(self, images: np.ndarray) -> tuple[Tensor, Tensor]:
        """Patch embeddings [B, N, d] and class token [B, 1, d] (position embeddings included)."""
        patches = Tensor(patchify(images, self.cfg.patch))
        e = self.patch_embed(patches) + self.pos[1:]
        b = patches.shape[0]
        c = nc.broadcast_to((self.class_token + self.pos[0]).reshape(1, 1, -1), (b, 1, self.cfg.width))
        return e, c

    def head(self, tokens: Tensor) -> Tensor:
        """Final visual embedding from the class token of a [B, T, d] sequence."""
        cls = tokens[:, self.cfg.num_patches]
        return self.ln_post(cls) @ self.proj

    def encode(self, images: np.ndarray) -> Tensor:
        e, c = self.embed(images)
        return self.head(run_blocks(self.blocks, nc.concat([e, c], axis=1)))


class TextEncoder(Module):
    """Bidirectional transformer over token ids; the sentence embedding is read at the last category token."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        d = cfg.width
        self.token_embed = nc.parameter(rng.normal(0, 0.5, size=(VOCAB_SIZE, d)))
        self.pos = nc.parameter(rng.normal(0, 0.02, size=(cfg.max_len, d)))
        self.blocks = [Block(d, cfg.heads, rng) for _ in range(cfg.depth)]
        self.ln_final = LayerNorm(d)
        self.proj = nc.parameter(rng.normal(0, 1.0 / np.sqrt(d), size=(d, cfg.embed_dim)))

    def embed_tokens(self, token_ids: np.ndarray) -> Tensor:
        """Category token embeddings C_t, shape [C, L, d]."""
        ids = np.atleast_2d(np.asarray(token_ids, dtype=int))
        length = ids.shape[1]
        if length > self.cfg.max_len:
            raise ShapeError(f"sequence length {length} exceeds max_len {self.cfg.max_len}")
        return self.token_embed[ids] + self.pos[:length]

    def head(self, tokens: Tensor, position: int) -> Tensor:
        return self.ln_final(tokens[:, position]) @ self.proj

    def encode(self, token_ids: np.ndarray) -> Tensor:
        x = self.embed_tokens(token_ids)
        return self.head(run_blocks(self.blocks, x), x.shape[1] - 1)


def _digest(module: Module) -> str:
    h = hashlib.sha256()
    for name, p in module.named_parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


class DomainEncoder(Module):
    """Stand-in for a domain foundation model: a vision transformer that is frozen after creation."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, provenance: str = "seeded-random"):
        self.backbone = VisionEncoder(cfg, rng)
        self.mask_token = nc.parameter(rng.normal(0, 0.02, size=cfg.width))
        self._provenance = provenance
        self._frozen_digest: str | None = None

    @property
    def cfg(self) -> EncoderConfig:
        return self.backbone.cfg

    @property
    def provenance(self) -> str:
        return self._provenance

    @property
    def frozen(self) -> bool:
        return self._frozen_digest is not None

    def freeze(self) -> "DomainEncoder":
        self.requires_grad_(False)
        self._frozen_digest = _digest(self)
        return self

    def digest(self) -> str:
        return _digest(self)

    def tokens(self, images: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
        """Final-layer tokens [B, N+1, d]; masked patches are replaced by the mask token."""
        bb = self.backbone
        patches = Tensor(patchify(images, bb.cfg.patch))
        e = bb.patch_embed(patches)
        if mask is not None:
            m = np.broadcast_to(mask[..., None], e.shape).astype(float)
            e = e * Tensor(1.0 - m) + Tensor(m) * nc.broadcast_to(self.mask_token, e.shape)
        e = e + bb.pos[1:]
        c = nc.broadcast_to((bb.class_token + bb.pos[0]).reshape(1, 1, -1), (patches.shape[0], 1, bb.cfg.width))
        x = run_blocks(bb.blocks, nc.concat([e, c], axis=1))
        return bb.ln_post(x)


def encode_domain(encoder: DomainEncoder, images: np.ndarray) -> np.ndarray:
    """Mean-pooled patch-token features F_d, shape [B, d_dom]. No graph is built."""
    if not encoder.frozen:
        raise RuntimeError("domain encoder must be frozen before use")
    with nc.no_grad():
        tok = encoder.tokens(images)
    n = encoder.cfg.num_patches
    return tok.data[:, :n].mean(axis=1)


class DomainProjection(Module):
    """Two affine maps with a GELU between them: F_d (width d_dom) -> F̂_d (width d)."""

    def __init__(self, d_dom: int, d: int, rng: np.random.Generator, hidden: int | None = None):
        hidden = hidden or d
        self.fc1 = Linear(d_dom, hidden, rng)
        self.fc2 = Linear(hidden, d, rng)
        self.d_in, self.d_out = d_dom, d

    def __call__(self, f_d) -> Tensor:
        f_d = nc.as_tensor(f_d)
        if f_d.shape[-1] != self.d_in:
            raise ShapeError(f"domain projection expects width {self.d_in}, got {f_d.shape}")
        return self.fc2(nc.gelu(self.fc1(f_d)))


def domain_project(proj: DomainProjection, f_d) -> Tensor:
    return proj(f_d)


# ---------------------------------------------------------------------------
# pretraining
# ---------------------------------------------------------------------------
def random_mask(rng: np.random.Generator, batch: int, n: int, ratio: float) -> np.ndarray:
    n_mask = int(round(ratio * n))
    mask = np.zeros((batch, n), dtype=bool)
    for b in range(batch):
        mask[b, rng.permutation(n)[:n_mask]] = True
    return mask


def _reconstruction_loss(encoder: DomainEncoder, decoder: Linear, images, mask) -> Tensor:
    n = encoder.cfg.num_patches
    target = patchify(images, encoder.cfg.patch)
    pred = decoder(encoder.tokens(images, mask)[:, :n])
    sel = mask if mask.any() else np.ones_like(mask)
    w = Tensor(np.broadcast_to(sel[..., None], target.shape) / (sel.sum() * target.shape[-1]))
    return nc.tsum(nc.square(pred - Tensor(target)) * w)


def mae_lite_pretrain(images: np.ndarray, mask_ratio: float = 0.75, steps: int = 500,
                      cfg: EncoderConfig | None = None, seed: int = 0, batch: int = 32,
                      lr: float = 2e-3) -> tuple[DomainEncoder, list[float]]:
    """Masked-patch reconstruction with a single linear pixel decoder, then freeze.

    Returns the frozen encoder and the per-step loss history.
    """
    images = np.asarray(images, dtype=float)
    if len(images) == 0:
        raise ValueError("mae_lite_pretrain needs at least one image")
    if not 0.0 <= mask_ratio < 1.0:
        raise ValueError(f"mask_ratio must lie in [0, 1), got {mask_ratio}")
    cfg = cfg or EncoderConfig()
    rng = np.random.default_rng(seed)
    enc = DomainEncoder(cfg, rng, provenance="mae-lite")
    dec = Linear(cfg.width, cfg.patch * cfg.patch, rng)
    params = enc.parameters() + dec.parameters()
    opt = nc.Adam(params, lr=lr)
    history = []
    for _ in range(steps):
        idx = rng.choice(len(images), size=min(batch, len(images)), replace=False)
        mask = random_mask(rng, len(idx), cfg.num_patches, mask_ratio)
        loss = _reconstruction_loss(enc, dec, images[idx], mask)
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append(loss.item())
    enc.freeze()
    return enc, history


def seeded_domain_encoder(cfg: EncoderConfig | None = None, seed: int = 0) -> DomainEncoder:
    return DomainEncoder(cfg or EncoderConfig(), np.random.default_rng(seed)).freeze()


def masked_reconstruction_error(encoder: DomainEncoder, fit_images: np.ndarray, test_images: np.ndarray,
                                mask_ratio: float = 0.75, seed: int = 0, ridge: float = 1e-3) -> float:
    """Held-out masked-patch MSE of a least-squares linear decoder fitted on frozen features.

    Both encoders under comparison get the same decoder family and masks, so
    the score isolates feature quality.
    """
    cfg = encoder.cfg
    n = cfg.num_patches

    def feats(imgs, rng):
        mask = random_mask(rng, len(imgs), n, mask_ratio)
        with nc.no_grad():
            tok = encoder.tokens(imgs, mask).data[:, :n]
        tgt = patchify(imgs, cfg.patch)
        return tok[mask], tgt[mask]

    xf, yf = feats(np.asarray(fit_images, float), np.random.default_rng(seed))
    xt, yt = feats(np.asarray(test_images, float), np.random.default_rng(seed + 1))
    xf1 = np.hstack([xf, np.ones((len(xf), 1))])
    w = np.linalg.solve(xf1.T @ xf1 + ridge * np.eye(xf1.shape[1]), xf1.T @ yf)
    pred = np.hstack([xt, np.ones((len(xt), 1))]) @ w
    return float(np.mean((pred - yt) ** 2))


def symmetric_contrastive_loss(img: Tensor, txt: Tensor, tau: float) -> Tensor:
    """Mean of image->text and text->image cross-entropies over a batch of matched pairs."""
    b = img.shape[0]
    ni, nt = nc.normalize(img), nc.normalize(txt)
    logits = (ni @ nt.transpose()) * (1.0 / tau)
    diag = (np.arange(b), np.arange(b))
    li = nc.log_softmax(logits, axis=1)[diag]
    lt = nc.log_softmax(logits, axis=0)[diag]
    return (nc.tsum(li) + nc.tsum(lt)) * (-0.5 / b)


def clip_lite_pretrain(images: np.ndarray, labels: np.ndarray, steps: int = 400,
                       cfg: EncoderConfig | None = None, seed: int = 0, batch: int = 16,
                       lr: float = 2e-3, tau: float = 0.07) -> tuple[VisionEncoder, TextEncoder, list[float]]:
    """Symmetric contrastive pretraining on (image, "a photo of <class>") pairs.

    Each batch holds at most one image per class, so every caption in a
    batch is a valid negative for all other images.
    """
    images = np.asarray(images, dtype=float)
    labels = np.asarray(labels, dtype=int)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ValueError("contrastive pretraining needs at least 2 classes")
    cfg = cfg or EncoderConfig()
    rng = np.random.default_rng(seed)
    vis = VisionEncoder(cfg, rng)
    txt = TextEncoder(cfg, rng)
    opt = nc.Adam(vis.parameters() + txt.parameters(), lr=lr)
    by_class = {c: np.flatnonzero(labels == c) for c in classes}
    history = []
    for _ in range(steps):
        chosen = rng.permutation(classes)[:batch]
        idx = np.array([rng.choice(by_class[c]) for c in chosen])
        loss = symmetric_contrastive_loss(vis.encode(images[idx]), txt.encode(caption_tokens(chosen)), tau)
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append(loss.item())
    vis.requires_grad_(False)
    txt.requires_grad_(False)
    return vis, txt, history


def zero_shot_predict(vis: VisionEncoder, txt: TextEncoder, images: np.ndarray, class_ids) -> np.ndarray:
    """Index into ``class_ids`` of the best-matching caption for each image."""
    with nc.no_grad():
        iv = vis.encode(images).data
        tv = txt.encode(caption_tokens(class_ids)).data
    iv = iv / np.linalg.norm(iv, axis=1, keepdims=True)
    tv = tv / np.linalg.norm(tv, axis=1, keepdims=True)
    return np.argmax(iv @ tv.T, axis=1)
