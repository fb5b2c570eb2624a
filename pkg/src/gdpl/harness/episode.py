"""Base-to-novel few-shot episodes: pretraining the frozen base, training prompts, evaluation.

Randomness comes from three independent streams spawned from the episode
seed: ``data`` (dataset, split, batch order), ``init`` (prompt-side
parameters) and ``noise`` (the Gaussian context noise). Ablations with the
same seed therefore see identical data in identical order.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .. import numcore as nc
from ..checkpoint import load_state, save_state
from ..encoders import (FIRST_CLASS_TOKEN, VOCAB_SIZE, DomainEncoder, EncoderConfig, TextEncoder, VisionEncoder, clip_lite_pretrain,
                        mae_lite_pretrain, seeded_domain_encoder, zero_shot_predict)
from ..model import GDPLConfig, GDPLModel
from ..quatnet import SlotPattern
from .data import Splits, SyntheticDataset, generate_dataset, split_base_novel
from .metrics import accuracy, harmonic_mean

log = logging.getLogger(__name__)

METRICS_HEADER = ("epoch", "loss", "acc_base", "acc_novel", "hm", "mean_cos_sim")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class PretrainConfig:
    seed: int = 0
    clip_steps: int = 300
    clip_per_class: int = 60
    clip_classes: int = 12
    mae_steps: int = 500
    mae_images: int = 480
    mask_ratio: float = 0.75
    domain_id: int = 1
    domain_encoder: str = "mae"  # "mae" or "random"

    def __post_init__(self):
        if self.domain_encoder not in ("mae", "random"):
            raise ValueError(f"domain_encoder must be 'mae' or 'random', got {self.domain_encoder!r}")


@dataclass(frozen=True)
class EpisodeConfig:
    seed: int = 0
    n_base: int = 8
    n_novel: int = 4
    shots: int = 16
    test_per_class: int = 40
    epochs: int = 10
    batch_train: int = 4
    batch_eval: int = 24
    depth: int = 3
    pattern: str = "[a,b,*,*]"
    lora_enabled: bool = True
    quat_enabled: bool = True
    domain_id: int = 1
    learning_rate: float = 3.5e-3
    momentum: float = 0.9
    rank: int = 4
    n_ctx: int = 2
    tau: float = 0.07
    domain_encoder: str = "mae"

    def __post_init__(self):
        if self.shots < 1:
            raise ValueError(f"shots must be >= 1, got {self.shots}")
        if self.n_base < 1 or self.n_novel < 1:
            raise ValueError("need at least one base and one novel class")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        SlotPattern.parse(self.pattern)

    def model_config(self) -> GDPLConfig:
        return GDPLConfig(n_ctx=self.n_ctx, depth=self.depth, pattern=SlotPattern.parse(self.pattern),
                          rank=self.rank, tau=self.tau, use_quat=self.quat_enabled, use_lora=self.lora_enabled)

    def pretrain_config(self) -> PretrainConfig:
        return PretrainConfig(domain_id=self.domain_id, domain_encoder=self.domain_encoder)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def seed_streams(seed: int) -> dict[str, np.random.Generator]:
    data, init, noise = np.random.SeedSequence(seed).spawn(3)
    return {"data": np.random.default_rng(data), "init": np.random.default_rng(init),
            "noise": np.random.default_rng(noise)}


# ---------------------------------------------------------------------------
# frozen base models
# ---------------------------------------------------------------------------
@dataclass
class BaseModels:
    vision: VisionEncoder
    text: TextEncoder
    domain: DomainEncoder
    config: PretrainConfig
    clip_history: list[float] = field(default_factory=list)
    mae_history: list[float] = field(default_factory=list)

    def digests(self) -> dict[str, str]:
        from ..encoders import _digest
        return {"vision": _digest(self.vision), "text": _digest(self.text), "domain": _digest(self.domain)}


_BASE_CACHE: dict[PretrainConfig, BaseModels] = {}


def pretrain_base(cfg: PretrainConfig = PretrainConfig(), use_cache: bool = True) -> BaseModels:
    """Contrastive pretraining on natural-style pairs plus the domain encoder, all frozen on return."""
    if use_cache and cfg in _BASE_CACHE:
        return _BASE_CACHE[cfg]
    enc_cfg = EncoderConfig()
    nat = generate_dataset(cfg.seed + 5_000, cfg.clip_classes, cfg.clip_per_class, "natural")
    vis, txt, clip_hist = clip_lite_pretrain(nat.images, nat.labels, steps=cfg.clip_steps, cfg=enc_cfg,
                                             seed=cfg.seed, batch=cfg.clip_classes)
    if cfg.domain_encoder == "mae":
        pool = generate_dataset(cfg.seed + 6_000, cfg.clip_classes,
                                max(1, cfg.mae_images // cfg.clip_classes), "shifted", cfg.domain_id)
        dom, mae_hist = mae_lite_pretrain(pool.images, cfg.mask_ratio, cfg.mae_steps, enc_cfg, seed=cfg.seed + 1)
    else:
        dom, mae_hist = seeded_domain_encoder(enc_cfg, seed=cfg.seed + 1), []
    base = BaseModels(vis, txt, dom, cfg, clip_hist, mae_hist)
    if use_cache:
        _BASE_CACHE[cfg] = base
    return base


def save_base(base: BaseModels, directory) -> None:
    meta = {"pretrain": asdict(base.config)}
    save_state(directory, "vision", base.vision.state_dict(), meta)
    save_state(directory, "text", base.text.state_dict(), meta)
    save_state(directory, "domain", base.domain.state_dict(), {**meta, "provenance": base.domain.provenance})


def load_base(directory) -> BaseModels:
    directory = Path(directory)
    for name in ("vision", "text", "domain"):
        if not (directory / f"{name}.manifest.json").exists():
            raise FileNotFoundError(f"missing frozen checkpoint {name!r} in {directory}")
    enc_cfg = EncoderConfig()
    rng = np.random.default_rng(0)
    vs, meta = load_state(directory, "vision")
    ts, _ = load_state(directory, "text")
    ds, dmeta = load_state(directory, "domain")
    vis, txt = VisionEncoder(enc_cfg, rng), TextEncoder(enc_cfg, rng)
    vis.load_state_dict(vs)
    txt.load_state_dict(ts)
    dom = DomainEncoder(enc_cfg, rng, provenance=dmeta.get("provenance", "seeded-random"))
    dom.load_state_dict(ds)
    dom.freeze()
    vis.requires_grad_(False)
    txt.requires_grad_(False)
    return BaseModels(vis, txt, dom, PretrainConfig(**meta["pretrain"]))


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------
class FeatureCache:
    """Frozen domain features F_d per dataset (the domain encoder never changes)."""

    def __init__(self, domain: DomainEncoder):
        self.domain = domain
        self._store: dict[str, np.ndarray] = {}

    def __call__(self, ds: SyntheticDataset) -> np.ndarray:
        key = ds.digest()
        if key not in self._store:
            from ..encoders import encode_domain
            self._store[key] = encode_domain(self.domain, ds.images)
        return self._store[key]


def evaluate_split(model: GDPLModel, ds: SyntheticDataset, f_d: np.ndarray | None = None, batch: int = 24) -> float:
    """Top-1 accuracy (percent) over all categories present in ``ds``."""
    if len(ds) == 0:
        raise ValueError("cannot evaluate an empty split")
    ids = ds.class_ids
    pred = model.predict(ds.images, ids, f_d, batch=batch)
    return accuracy(np.asarray(ids)[pred], ds.labels)


def evaluate(model: GDPLModel, splits: Splits, features: FeatureCache | None = None,
             batch: int = 24) -> tuple[float, float]:
    feats = features or FeatureCache(model.domain)
    return (evaluate_split(model, splits.base_test, feats(splits.base_test), batch),
            evaluate_split(model, splits.novel_test, feats(splits.novel_test), batch))


def zero_shot_accuracy(base: BaseModels, ds: SyntheticDataset) -> float:
    """Frozen dual encoder with the plain "a photo of <class>" captions."""
    if len(ds) == 0:
        raise ValueError("cannot evaluate an empty split")
    ids = ds.class_ids
    return accuracy(np.asarray(ids)[zero_shot_predict(base.vision, base.text, ds.images, ids)], ds.labels)


def slot_cosine(context: np.ndarray, f_hat: np.ndarray) -> float:
    """Mean cosine between every context row [n, d] and every domain feature row [B, d].

    Pairs with a zero-norm side are undefined and left out; NaN if none remain.
    """
    context, f_hat = np.atleast_2d(context), np.atleast_2d(f_hat)
    na, nb = np.linalg.norm(context, axis=1), np.linalg.norm(f_hat, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = (f_hat @ context.T) / np.outer(nb, na)
    cos = cos[np.isfinite(cos)]
    return float(cos.mean()) if cos.size else float("nan")


def track_orthogonality(model: GDPLModel, f_d: np.ndarray) -> list[float]:
    """Per quaternion layer, the mean cosine between its two nonzero slot inputs.

    Index 0 is the language-branch layer (context vs. projected domain
    feature), indices 1..k the vision-branch layers (language prompt vs.
    projected domain feature).
    """
    with nc.no_grad():
        f_hat = model.prompts.projection(nc.Tensor(f_d)).data
    return [slot_cosine(p.data, f_hat) for p in [model.prompts.ctx] + list(model.prompts.lang_prompts)]


def orthogonality_magnitude(layer_cos: list[float]) -> float:
    """Mean |cos| over layers: 0 means every slot pair is orthogonal."""
    vals = np.abs(np.asarray(layer_cos, dtype=float))
    vals = vals[np.isfinite(vals)]
    return float(vals.mean()) if len(vals) else float("nan")


def cross_dataset_eval(model: GDPLModel, targets: dict[str, Splits], batch: int = 24) -> dict[str, float]:
    """Base-split accuracy of an unchanged model on each target domain."""
    for name, sp in targets.items():
        bad = [c for c in sp.base_classes if not 0 <= c < VOCAB_SIZE - FIRST_CLASS_TOKEN]
        if bad:
            raise ValueError(f"target {name!r} has class ids outside the caption vocabulary: {bad}")
    feats = FeatureCache(model.domain)
    out = {}
    for name, sp in targets.items():
        out[name] = evaluate_split(model, sp.base_test, feats(sp.base_test), batch)
    return out


def target_splits(cfg: "EpisodeConfig", domain_ids=(2, 3), include_fine: bool = True,
                  seed_offset: int = 7_000) -> dict[str, Splits]:
    """Held-out synthetic domains for cross-dataset evaluation.

    Each shifted domain reuses the source class list under its own transform;
    the ``fine`` target has disjoint textures and class tokens.
    """
    out = {}
    n = cfg.n_base + cfg.n_novel
    for d in domain_ids:
        ds = generate_dataset(cfg.seed + seed_offset + d, n, cfg.shots + cfg.test_per_class, "shifted", d)
        out[f"domain{d}"] = split_base_novel(ds, cfg.n_base, cfg.n_novel, cfg.shots)
    if include_fine:
        ds = generate_dataset(cfg.seed + seed_offset, 8, cfg.shots + cfg.test_per_class, "shifted",
                              cfg.domain_id, family="fine")
        out["fine"] = split_base_novel(ds, 4, 4, cfg.shots)
    return out


def zero_shot_cross_eval(base: "BaseModels", targets: dict[str, Splits]) -> dict[str, float]:
    return {name: zero_shot_accuracy(base, sp.base_test) for name, sp in targets.items()}


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------
@dataclass
class EpisodeReport:
    acc_base: float
    acc_novel: float
    hm: float
    zero_shot_base: float
    zero_shot_novel: float
    zero_shot_hm: float
    losses: list[float]
    cos_trace: list[list[float]]
    mean_cos_sim: list[float]
    metrics: list[dict]
    config: dict
    seeds: dict
    wall_clock: float
    dataset_digest: str
    frozen_digests: dict

    def to_json(self) -> str:
        return json.dumps(_jsonable(asdict(self)), indent=2, sort_keys=True) + "\n"


def _jsonable(x):
    if isinstance(x, float) and not np.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


@dataclass
class EpisodeResult:
    model: GDPLModel
    report: EpisodeReport
    splits: Splits
    base: BaseModels


def build_splits(cfg: EpisodeConfig, data_rng: np.random.Generator) -> Splits:
    ds = generate_dataset(int(data_rng.integers(2 ** 31)), cfg.n_base + cfg.n_novel,
                          cfg.shots + cfg.test_per_class, "shifted", cfg.domain_id)
    return split_base_novel(ds, cfg.n_base, cfg.n_novel, cfg.shots, rng=data_rng)


def train_episode(cfg: EpisodeConfig = EpisodeConfig(), base: BaseModels | None = None,
                  base_dir=None) -> EpisodeResult:
    """Train prompts, quaternion layers, projection and low-rank adapters on the base classes."""
    t0 = time.perf_counter()
    if base is None:
        base = load_base(base_dir) if base_dir is not None else pretrain_base(cfg.pretrain_config())
    frozen_before = base.digests()
    streams = seed_streams(cfg.seed)
    splits = build_splits(cfg, streams["data"])
    model = GDPLModel(base.vision, base.text, base.domain, cfg.model_config(), streams["init"])
    feats = FeatureCache(base.domain)
    train = splits.base_train
    ids = splits.base_classes
    labels = np.searchsorted(ids, train.labels)
    f_train = feats(train)

    opt = nc.SGD(model.parameters(), cfg.learning_rate, cfg.momentum,
                 names=[n for n, _ in model.named_parameters()])

    def record(epoch: int, loss: float, rows: list, trace: list):
        acc_b, acc_n = evaluate(model, splits, feats, cfg.batch_eval)
        cos = track_orthogonality(model, f_train)
        trace.append(cos)
        hm = harmonic_mean(acc_b, acc_n) if acc_b + acc_n > 0 else 0.0
        rows.append({"epoch": epoch, "loss": loss, "acc_base": acc_b, "acc_novel": acc_n, "hm": hm,
                     "mean_cos_sim": orthogonality_magnitude(cos)})
        log.info("epoch %d loss %.4f base %.2f novel %.2f hm %.2f", epoch, loss, acc_b, acc_n, hm)

    rows: list[dict] = []
    trace: list[list[float]] = []
    with nc.no_grad():
        init_loss = float(np.mean([
            model.loss(train.images[s:s + cfg.batch_eval], labels[s:s + cfg.batch_eval], ids,
                       f_train[s:s + cfg.batch_eval], training=False).item()
            for s in range(0, len(train), cfg.batch_eval)]))
    record(0, init_loss, rows, trace)
    data_rng, noise_rng = streams["data"], streams["noise"]
    for epoch in range(1, cfg.epochs + 1):
        order = data_rng.permutation(len(train))
        losses = []
        for s in range(0, len(order), cfg.batch_train):
            idx = order[s:s + cfg.batch_train]
            loss = model.loss(train.images[idx], labels[idx], ids, f_train[idx], training=True, rng=noise_rng)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        record(epoch, float(np.mean(losses)), rows, trace)

    if base.digests() != frozen_before:
        raise RuntimeError("frozen encoder weights changed during prompt learning")
    zs_b = zero_shot_accuracy(base, splits.base_test)
    zs_n = zero_shot_accuracy(base, splits.novel_test)
    last = rows[-1]
    report = EpisodeReport(
        acc_base=last["acc_base"], acc_novel=last["acc_novel"], hm=last["hm"],
        zero_shot_base=zs_b, zero_shot_novel=zs_n, zero_shot_hm=harmonic_mean(zs_b, zs_n),
        losses=[r["loss"] for r in rows], cos_trace=trace, mean_cos_sim=[r["mean_cos_sim"] for r in rows],
        metrics=rows, config={"episode": cfg.to_dict(), "pretrain": asdict(base.config)},
        seeds={"episode": cfg.seed, "pretrain": base.config.seed},
        wall_clock=time.perf_counter() - t0,
        dataset_digest=splits.base_train.digest(), frozen_digests=frozen_before)
    return EpisodeResult(model, report, splits, base)


# ---------------------------------------------------------------------------
# run directory
# ---------------------------------------------------------------------------
def metrics_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for r in rows:
        w.writerow([r["epoch"]] + [f"{r[k]:.6f}" for k in METRICS_HEADER[1:]])
    return buf.getvalue()


def write_run(result: EpisodeResult, out_dir, curves: bool = True) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rep = result.report
    (out / "config.snapshot").write_text(json.dumps(rep.config, indent=2, sort_keys=True) + "\n")
    (out / "metrics.csv").write_text(metrics_csv(rep.metrics), newline="")
    (out / "report.json").write_text(rep.to_json())
    save_state(out / "checkpoints", "prompts", result.model.state_dict(), {"episode": rep.config["episode"]})
    save_base(result.base, out / "checkpoints")
    if curves:
        from .curves import write_curves
        write_curves(rep, out / "curves")
    return out


def load_run_model(run_dir, base: BaseModels | None = None) -> tuple[GDPLModel, EpisodeConfig, BaseModels]:
    run_dir = Path(run_dir)
    state, meta = load_state(run_dir / "checkpoints", "prompts")
    cfg = EpisodeConfig.from_dict(meta["episode"])
    base = base or load_base(run_dir / "checkpoints")
    model = GDPLModel(base.vision, base.text, base.domain, cfg.model_config(), np.random.default_rng(0))
    model.load_state_dict(state)
    return model, cfg, base
