import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdnet import model as M
from rdnet import train as TR
from rdnet.errors import DimensionError, InputError
from rdnet.gradcheck import numeric_grad, rel_err
from rdnet.tensor import ConvWeights


def scalar_params(value, dtype=np.float64):
    return {"w": ConvWeights(np.full((1, 1, 1, 1), value, dtype), np.zeros(1, dtype))}


def scalar_grads(value, dtype=np.float64):
    return {"w": ConvWeights(np.full((1, 1, 1, 1), value, dtype), np.zeros(1, dtype))}


def test_l1_equal_inputs():
    a = np.ones((1, 1, 2, 2), np.float32)
    loss, g = TR.l1_loss(a, a.copy())
    assert loss == 0 and not g.any()


def test_l1_hand_values():
    p = np.array([2.0, -2.0]).reshape(1, 1, 1, 2)
    loss, g = TR.l1_loss(p, np.zeros_like(p))
    assert loss == 2.0
    np.testing.assert_array_equal(g.ravel(), [0.5, -0.5])


def test_l1_finite_differences(rng):
    p, t = rng.normal(size=(2, 3, 4, 4)), rng.normal(size=(2, 3, 4, 4))
    _, g = TR.l1_loss(p, t)
    assert rel_err(g, numeric_grad(lambda: TR.l1_loss(p, t)[0], p)) <= 1e-5


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 5), st.integers(0, 1000))
def test_l1_gradient_bounded(c, h, seed):
    r = np.random.default_rng(seed)
    p, t = r.normal(size=(1, c, h, h)), r.normal(size=(1, c, h, h))
    _, g = TR.l1_loss(p, t)
    assert np.all(np.abs(g) <= 1 / p.size)


def test_l1_shape_mismatch():
    with pytest.raises(DimensionError):
        TR.l1_loss(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)))


def test_adam_zero_grad_leaves_params():
    p = scalar_params(0.7)
    st_ = TR.AdamState.zeros_like(p)
    for _ in range(5):
        TR.adam_step(p, scalar_grads(0.0), st_, 1e-3)
    assert p["w"].kernel.item() == 0.7
    assert st_.t == 5


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_adam_zero_grad_unchanged_at_any_step(t):
    p = scalar_params(-1.25)
    st_ = TR.AdamState.zeros_like(p)
    st_.t = t
    TR.adam_step(p, scalar_grads(0.0), st_, 1e-2)
    assert p["w"].kernel.item() == -1.25 and st_.t == t + 1


def adam_oracle(x, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return x


def test_adam_first_step_is_lr_sign():
    p = scalar_params(1.0)
    TR.adam_step(p, scalar_grads(0.3), TR.AdamState.zeros_like(p), 1e-4)
    # m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
    assert p["w"].kernel.item() == pytest.approx(1.0 - 1e-4 * 0.3 / (0.3 + 1e-8), abs=1e-15)
    assert p["w"].kernel.item() == pytest.approx(1.0 - 1e-4, abs=1e-11)


def test_adam_two_steps_match_scalar_oracle():
    p = scalar_params(0.5)
    st_ = TR.AdamState.zeros_like(p)
    for _ in range(2):
        TR.adam_step(p, scalar_grads(-0.02), st_, 1e-3)
    assert abs(p["w"].kernel.item() - adam_oracle(0.5, [-0.02, -0.02], 1e-3)) <= 1e-12


def test_adam_varying_grads_match_oracle():
    gs = [0.3, -0.1, 0.05, 2.0, 0.0, -0.7]
    p = scalar_params(0.1)
    st_ = TR.AdamState.zeros_like(p)
    for g in gs:
        TR.adam_step(p, scalar_grads(g), st_, 5e-3)
    assert abs(p["w"].kernel.item() - adam_oracle(0.1, gs, 5e-3)) <= 1e-12
    assert np.all(st_.v["w"].kernel >= 0)


def test_adam_shape_mismatch():
    p = scalar_params(0.0)
    bad = {"w": ConvWeights(np.zeros((1, 2, 1, 1)), np.zeros(1))}
    with pytest.raises(DimensionError):
        TR.adam_step(p, bad, TR.AdamState.zeros_like(p), 1e-3)


def test_lr_schedule():
    cfg = TR.TrainConfig()
    assert TR.lr_schedule(0, cfg) == 1e-4
    assert TR.lr_schedule(199, cfg) == 1e-4
    assert TR.lr_schedule(200, cfg) == 5e-5
    assert TR.lr_schedule(399, cfg) == 5e-5
    assert TR.lr_schedule(400, cfg) == 2.5e-5
    with pytest.raises(InputError):
        TR.lr_schedule(-1, cfg)


def test_train_config_defaults():
    cfg = TR.TrainConfig()
    assert (cfg.batch, cfg.patch_lq, cfg.lr0, cfg.halve_every, cfg.iters_per_epoch) == (16, 48, 1e-4, 200, 1000)
    assert (cfg.beta1, cfg.beta2, cfg.eps) == (0.9, 0.999, 1e-8)
    with pytest.raises(InputError):
        TR.TrainConfig(batch=0)


def test_sample_patch_exact_size_is_whole_image(rng):
    lq, hq = rng.random((3, 48, 48)), rng.random((3, 96, 96))
    a, b = TR.sample_patch(lq, hq, 2, 48, rng)
    assert np.array_equal(a, lq) and np.array_equal(b, hq)


def test_sample_patch_alignment(rng):
    lq = np.arange(20 * 20, dtype=float).reshape(1, 20, 20)
    hq = np.kron(lq, np.ones((3, 3)))  # each LQ pixel becomes a 3x3 HQ block
    for _ in range(20):
        a, b = TR.sample_patch(lq, hq, 3, 5, rng)
        assert b.shape == (1, 15, 15)
        assert np.array_equal(np.kron(a, np.ones((3, 3))), b)


def test_sample_patch_scale_one_same_origin(rng):
    img = rng.random((1, 30, 30))
    a, b = TR.sample_patch(img, img, 1, 8, rng)
    assert np.array_equal(a, b)


def test_sample_patch_errors(rng):
    with pytest.raises(InputError):
        TR.sample_patch(np.zeros((1, 40, 40)), np.zeros((1, 80, 80)), 2, 48, rng)
    with pytest.raises(InputError):
        TR.sample_patch(np.zeros((1, 50, 50)), np.zeros((1, 99, 100)), 2, 48, rng)


def test_sample_patch_origins_uniform():
    """10,000 origins on a 100x100 LQ image with 48x48 patches, chi-square on 53x53 cells."""
    from scipy import stats

    rng = np.random.default_rng(5)
    lq = np.arange(100 * 100, dtype=float).reshape(1, 100, 100)
    counts = np.zeros((53, 53))
    for _ in range(10_000):
        a, _ = TR.sample_patch(lq, lq, 1, 48, rng)
        y, x = divmod(int(a[0, 0, 0]), 100)
        counts[y, x] += 1
    # marginals are tested separately so each cell has enough mass
    for marginal in (counts.sum(1), counts.sum(0)):
        chi2 = ((marginal - 10_000 / 53) ** 2 / (10_000 / 53)).sum()
        assert stats.chi2.sf(chi2, 52) > 1e-3
    assert counts[0, 0] >= 0 and counts.sum() == 10_000
    assert counts.sum(1)[52] > 0 and counts.sum(0)[52] > 0


def test_augment_identity_and_involution(rng):
    from rdnet.tensor import dihedral
    lq, hq = rng.random((3, 4, 4)), rng.random((3, 8, 8))
    picks = {}
    for seed in range(200):
        k = int(np.random.default_rng(seed).integers(0, 8))
        picks.setdefault(k, seed)
    assert len(picks) == 8
    a, b = TR.augment(lq, hq, np.random.default_rng(picks[0]))
    assert np.array_equal(a, lq) and np.array_equal(b, hq)
    flip = 4  # horizontal flip, no rotation
    assert np.array_equal(dihedral(dihedral(lq, flip), flip), lq)


def tiny_setup():
    cfg = M.RdnConfig(d_blocks=2, c_layers=3, growth=8, g0=8, scale=2)
    rng = np.random.default_rng(0)
    hq = rng.random((3, 64, 64)).astype(np.float32)
    from rdnet.degrade import DegradationSpec, degrade
    lq = degrade(hq, DegradationSpec.standard("BI", scale=2))
    return cfg, [(lq, hq)]


def test_train_is_deterministic():
    cfg, pairs = tiny_setup()
    tc = TR.TrainConfig(batch=2, patch_lq=8, iters_per_epoch=5, max_epochs=2, seed=3)
    a = TR.train(cfg, pairs, tc)
    b = TR.train(cfg, pairs, tc)
    assert a.losses == b.losses
    assert all(np.array_equal(a.params[k].kernel, b.params[k].kernel) for k in a.params)


def test_train_loss_decreases():
    cfg, pairs = tiny_setup()
    tc = TR.TrainConfig(batch=4, patch_lq=12, iters_per_epoch=200, max_epochs=1, seed=0, lr0=1e-3)
    res = TR.train(cfg, pairs, tc, params=M.init_params(cfg, 0, scheme="torch"))
    losses = [r[3] for r in res.losses]
    assert np.mean(losses[-10:]) < np.mean(losses[:10])


def test_train_log_and_checkpoints(tmp_path):
    cfg, pairs = tiny_setup()
    tc = TR.TrainConfig(batch=1, patch_lq=8, iters_per_epoch=3, max_epochs=2, seed=0)
    TR.train(cfg, pairs, tc, ckpt_dir=tmp_path / "ck", log_path=tmp_path / "loss.csv")
    lines = (tmp_path / "loss.csv").read_text().splitlines()
    assert lines[0] == "epoch,iter,lr,loss" and len(lines) == 1 + 6
    assert sorted(p.name for p in (tmp_path / "ck").iterdir()) == ["epoch_0001.ckpt", "epoch_0002.ckpt"]


def test_resume_matches_uninterrupted_run(tmp_path):
    from rdnet.checkpoint import load_checkpoint
    cfg, pairs = tiny_setup()
    tc = TR.TrainConfig(batch=2, patch_lq=8, iters_per_epoch=4, max_epochs=3, seed=1)
    full = TR.train(cfg, pairs, tc, ckpt_dir=tmp_path)
    ck = load_checkpoint(tmp_path / "epoch_0001.ckpt")
    resumed = TR.train(cfg, pairs, tc, params=ck.params, state=ck.state, start_epoch=ck.epoch)
    assert resumed.losses == full.losses[4:]


def test_train_rejects_bad_data():
    cfg, pairs = tiny_setup()
    with pytest.raises(InputError):
        TR.train(cfg, [], TR.TrainConfig())
    with pytest.raises(InputError):
        TR.train(cfg, pairs, TR.TrainConfig(patch_lq=48))
