import numpy as np
import pytest

from gdpl import numcore as nc
from gdpl.encoders import (VOCAB_SIZE, DomainEncoder, DomainProjection, EncoderConfig, TextEncoder, VisionEncoder,
                           caption_tokens, clip_lite_pretrain, domain_project, encode_domain, mae_lite_pretrain,
                           masked_reconstruction_error, patchify, seeded_domain_encoder, symmetric_contrastive_loss,
                           zero_shot_predict)
from gdpl.harness.data import generate_dataset
from gdpl.numcore import ShapeError, Tensor

SMALL = EncoderConfig(width=16, depth=2, heads=2)


def test_patchify_counts_and_order():
    img = np.arange(32 * 32, dtype=float).reshape(32, 32)
    p = patchify(img, 8)
    assert p.shape == (1, 16, 64)
    np.testing.assert_array_equal(p[0, 1].reshape(8, 8), img[:8, 8:16])
    np.testing.assert_array_equal(p[0, 4].reshape(8, 8), img[8:16, :8])


def test_patchify_rejects_indivisible_extent():
    with pytest.raises(ShapeError):
        patchify(np.zeros((30, 32)), 8)


def test_zero_image_zero_patch_tokens(rng):
    vis = VisionEncoder(SMALL, rng)
    tok = vis.patch_embed(Tensor(patchify(np.zeros((2, 32, 32)), 8)))
    np.testing.assert_array_equal(tok.data, 0.0)


def test_vision_embed_shapes_and_determinism(rng):
    vis = VisionEncoder(SMALL, rng)
    imgs = np.random.default_rng(1).standard_normal((3, 32, 32))
    e, c = vis.embed(imgs)
    assert e.shape == (3, 16, 16) and c.shape == (3, 1, 16)
    np.testing.assert_array_equal(vis.encode(imgs).data, vis.encode(imgs).data)
    assert vis.encode(imgs).shape == (3, SMALL.embed_dim)


def test_caption_template_and_vocabulary():
    np.testing.assert_array_equal(caption_tokens([0, 5]), [[0, 1, 2, 3], [0, 1, 2, 8]])
    with pytest.raises(ValueError):
        caption_tokens([VOCAB_SIZE - 3])
    with pytest.raises(ValueError):
        caption_tokens([-1])


def test_text_encoder_shapes(rng):
    txt = TextEncoder(SMALL, rng)
    emb = txt.embed_tokens(caption_tokens([0, 1, 2]))
    assert emb.shape == (3, 4, 16)
    assert txt.encode(caption_tokens([0, 1, 2])).shape == (3, SMALL.embed_dim)


def test_domain_encoder_must_be_frozen(rng):
    dom = DomainEncoder(SMALL, rng)
    with pytest.raises(RuntimeError):
        encode_domain(dom, np.zeros((1, 32, 32)))
    dom.freeze()
    assert dom.frozen and dom.provenance == "seeded-random"
    assert all(not p.requires_grad for p in dom.parameters())


def test_encode_domain_is_mean_of_patch_tokens_and_seeded():
    imgs = np.random.default_rng(2).standard_normal((4, 32, 32))
    a = encode_domain(seeded_domain_encoder(SMALL, seed=3), imgs)
    b = encode_domain(seeded_domain_encoder(SMALL, seed=3), imgs)
    np.testing.assert_array_equal(a, b)
    enc = seeded_domain_encoder(SMALL, seed=3)
    with nc.no_grad():
        tok = enc.tokens(imgs).data
    np.testing.assert_allclose(a, tok[:, :16].mean(axis=1), atol=0)
    assert a.shape == (4, 16) and np.isfinite(a).all()


def test_no_gradient_reaches_domain_encoder():
    enc = seeded_domain_encoder(SMALL, seed=0)
    proj = DomainProjection(16, 8, np.random.default_rng(0))
    f = encode_domain(enc, np.random.default_rng(1).standard_normal((2, 32, 32)))
    nc.tsum(domain_project(proj, f)).backward()
    assert all(p.grad is None for p in enc.parameters())
    assert all(p.grad is not None for p in proj.parameters())


def test_projection_zero_in_zero_out():
    proj = DomainProjection(6, 4, np.random.default_rng(0))
    out = proj(Tensor(np.zeros((3, 6))))
    np.testing.assert_array_equal(out.data, 0.0)
    assert out.shape == (3, 4)
    with pytest.raises(ShapeError):
        proj(Tensor(np.zeros((3, 5))))


def test_projection_gradcheck():
    rng = np.random.default_rng(1)
    proj = DomainProjection(5, 4, rng)
    for p in proj.parameters():
        p.data = rng.standard_normal(p.shape) * 0.5
    x = Tensor(rng.standard_normal((3, 5)))
    assert nc.finite_diff_check(lambda: nc.tsum(nc.square(proj(x))), proj.parameters()) < 1e-4


def test_mae_pretrain_reduces_loss_and_freezes():
    imgs = generate_dataset(0, 4, 8, "shifted").images
    enc, hist = mae_lite_pretrain(imgs, 0.75, steps=25, cfg=SMALL, seed=0, batch=16)
    assert enc.frozen and enc.provenance == "mae-lite"
    assert np.mean(hist[-5:]) <= np.mean(hist[:5])
    digest = enc.digest()
    encode_domain(enc, imgs[:4])
    assert enc.digest() == digest


def test_mae_degenerate_ratio_and_errors():
    imgs = generate_dataset(0, 2, 2, "shifted").images
    enc, hist = mae_lite_pretrain(imgs, 0.0, steps=2, cfg=SMALL)
    assert len(hist) == 2 and np.isfinite(hist).all()
    with pytest.raises(ValueError):
        mae_lite_pretrain(imgs[:0], 0.5, steps=1, cfg=SMALL)
    with pytest.raises(ValueError):
        mae_lite_pretrain(imgs, 1.0, steps=1, cfg=SMALL)


def test_mae_encoder_beats_random_on_held_out_reconstruction(base):
    fit = generate_dataset(11, 12, 10, "shifted").images
    held = generate_dataset(12, 12, 10, "shifted").images
    trained = masked_reconstruction_error(base.domain, fit, held)
    random_ = masked_reconstruction_error(seeded_domain_encoder(seed=1), fit, held)
    assert trained < random_


def test_symmetric_loss_near_zero_at_perfect_alignment():
    e = Tensor(np.eye(5) * 3.0)
    assert symmetric_contrastive_loss(e, e, tau=0.01).item() < 1e-6


def test_clip_pretrain_errors_and_determinism():
    ds = generate_dataset(0, 3, 4, "natural")
    with pytest.raises(ValueError):
        clip_lite_pretrain(ds.images[:4], ds.labels[:4], steps=1, cfg=SMALL)
    v1, t1, _ = clip_lite_pretrain(ds.images, ds.labels, steps=3, cfg=SMALL, seed=0, batch=3)
    v2, t2, _ = clip_lite_pretrain(ds.images, ds.labels, steps=3, cfg=SMALL, seed=0, batch=3)
    for a, b in zip(v1.parameters() + t1.parameters(), v2.parameters() + t2.parameters()):
        assert a.data.tobytes() == b.data.tobytes()
    assert not any(p.requires_grad for p in v1.parameters())


def test_zero_shot_above_chance_on_natural_style(base):
    ds = generate_dataset(900, 8, 30, "natural")
    pred = zero_shot_predict(base.vision, base.text, ds.images, ds.class_ids)
    acc = 100 * np.mean(np.array(ds.class_ids)[pred] == ds.labels)
    assert acc > 12.5
