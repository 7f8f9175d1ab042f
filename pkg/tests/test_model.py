import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdnet import model as M
from rdnet import tensor as T
from rdnet.errors import DimensionError, InputError, StateError
from rdnet.gradcheck import check_model, tiny_configs


def small_cfg(**kw):
    base = dict(d_blocks=2, c_layers=2, growth=4, g0=4, scale=2, in_channels=3, out_channels=3)
    base.update(kw)
    return M.RdnConfig(**base)


configs = st.builds(
    lambda d, c, g, g0, scale, cm, lrl, gff, ch: M.RdnConfig(
        d_blocks=d, c_layers=c, growth=g, g0=g0, scale=scale,
        topology=M.SAME_RES if scale == 1 else M.SR,
        ablation=M.Ablation(cm=cm, lrl=lrl, gff=gff), in_channels=ch, out_channels=ch),
    st.integers(1, 4), st.integers(1, 5), st.integers(1, 12), st.integers(1, 12),
    st.sampled_from(M.SCALES), st.booleans(), st.booleans(), st.booleans(), st.sampled_from([1, 3]))


def test_config_invariants():
    with pytest.raises(InputError):
        M.RdnConfig(scale=1, topology=M.SR)
    with pytest.raises(InputError):
        M.RdnConfig(scale=2, topology=M.SAME_RES)
    with pytest.raises(InputError):
        M.RdnConfig(ablation=M.Ablation(lff=False))
    with pytest.raises(InputError):
        M.RdnConfig(d_blocks=0)
    with pytest.raises(InputError):
        M.RdnConfig(scale=5)


def test_init_deterministic():
    cfg = small_cfg()
    a, b = M.init_params(cfg, 7), M.init_params(cfg, 7)
    for k in a:
        assert np.array_equal(a[k].kernel, b[k].kernel) and np.array_equal(a[k].bias, b[k].bias)
    c = M.init_params(cfg, 8)
    assert not np.array_equal(a["sfe1"].kernel, c["sfe1"].kernel)


def test_init_he_statistics():
    cfg = small_cfg(g0=64, growth=64, c_layers=1, d_blocks=1)
    p = M.init_params(cfg, 0)
    assert all(not w.bias.any() for w in p.values())
    var = p["sfe2"].kernel.var()  # 64x64x3x3
    assert abs(var - 2 / 576) <= 0.2 * (2 / 576)


def test_init_torch_scheme_bounds():
    cfg = small_cfg()
    p = M.init_params(cfg, 0, scheme="torch")
    for name, (o, i, k) in M.param_shapes(cfg).items():
        bound = 1 / np.sqrt(i * k * k)
        assert np.abs(p[name].kernel).max() <= bound
        assert np.abs(p[name].bias).max() <= bound
    with pytest.raises(InputError):
        M.init_params(cfg, 0, scheme="xavier")


def test_rdb_channel_counts_full_block():
    cfg = M.RdnConfig(d_blocks=1, c_layers=8, growth=64, g0=64)
    shapes = M.param_shapes(cfg)
    for c in range(8):
        assert shapes[f"rdb.0.conv.{c}"][1] == 64 + c * 64
    assert shapes["rdb.0.lff"][1] == 576


def test_rdb_channel_counts_without_cm():
    cfg = M.RdnConfig(d_blocks=1, c_layers=3, growth=8, g0=16, ablation=M.Ablation(cm=False))
    shapes = M.param_shapes(cfg)
    assert [shapes[f"rdb.0.conv.{c}"][1] for c in range(3)] == [16, 8, 16]
    assert shapes["rdb.0.lff"][1] == 24


def test_rdb_zero_weights_lrl_is_identity(rng):
    cfg = small_cfg()
    block = {k[len("rdb.0."):]: v for k, v in M.zero_params(cfg).items() if k.startswith("rdb.0.")}
    x = rng.normal(size=(2, 4, 5, 5)).astype(np.float32)
    assert np.array_equal(M.rdb_forward(x, block, cfg), x)


def test_rdb_channel_mismatch(rng):
    cfg = small_cfg()
    block = {k[len("rdb.0."):]: v for k, v in M.init_params(cfg).items() if k.startswith("rdb.0.")}
    with pytest.raises(DimensionError):
        M.rdb_forward(np.zeros((1, 5, 4, 4), np.float32), block, cfg)


@pytest.mark.parametrize("ab", M.ALL_ABLATIONS, ids=lambda a: a.name)
def test_rdb_matches_unrolled_composition(rng, ab):
    cfg = M.RdnConfig(d_blocks=1, c_layers=2, growth=4, g0=4, ablation=ab)
    p = M.init_params(cfg, 3)
    block = {k[len("rdb.0."):]: v for k, v in p.items() if k.startswith("rdb.0.")}
    x = rng.normal(size=(1, 4, 6, 6)).astype(np.float32)

    w1, w2, lff = block["conv.0"], block["conv.1"], block["lff"]
    f1 = T.relu_forward(T.conv2d_forward(x, w1, 1))
    in2 = T.concat_channels([x, f1]) if ab.cm else f1
    f2 = T.relu_forward(T.conv2d_forward(in2, w2, 1))
    fused = T.concat_channels([x, f1, f2] if ab.cm else [f1, f2])
    local = T.conv2d_forward(fused, lff, 0)
    want = T.add(x, local) if ab.lrl else local

    assert np.array_equal(M.rdb_forward(x, block, cfg), want)


@pytest.mark.parametrize("scale", [2, 3, 4, 8])
def test_sr_output_shape(rng, scale):
    cfg = small_cfg(scale=scale, d_blocks=1, c_layers=1)
    x = rng.random((1, 3, 5, 4)).astype(np.float32)
    assert M.rdn_forward(x, M.init_params(cfg), cfg).shape == (1, 3, 5 * scale, 4 * scale)


def test_sr_x2_contract_shape(rng):
    cfg = small_cfg()
    assert M.rdn_forward(rng.random((1, 3, 24, 24)).astype(np.float32),
                         M.init_params(cfg), cfg).shape == (1, 3, 48, 48)


def test_sr_x4_training_batch_shape(rng):
    cfg = small_cfg(scale=4, d_blocks=1, c_layers=1, growth=2, g0=2)
    x = rng.random((16, 3, 48, 48)).astype(np.float32)
    assert M.rdn_forward(x, M.init_params(cfg), cfg).shape == (16, 3, 192, 192)


@pytest.mark.parametrize("ab", M.ALL_ABLATIONS, ids=lambda a: a.name)
def test_same_res_zero_weights_identity(rng, ab):
    cfg = M.RdnConfig(d_blocks=2, c_layers=2, growth=3, g0=5, scale=1, topology=M.SAME_RES,
                      ablation=ab, in_channels=1, out_channels=1)
    x = rng.random((2, 1, 7, 6)).astype(np.float32)
    assert np.array_equal(M.rdn_forward(x, M.zero_params(cfg), cfg), x)


def test_rdn_input_errors(rng):
    cfg = small_cfg()
    p = M.init_params(cfg)
    with pytest.raises(DimensionError):
        M.rdn_forward(np.zeros((1, 1, 8, 8), np.float32), p, cfg)
    with pytest.raises(DimensionError):
        M.rdn_forward(np.zeros((1, 3, 2, 8), np.float32), p, cfg)


def test_backward_requires_trace():
    with pytest.raises(StateError):
        M.rdn_backward(np.zeros((1, 3, 4, 4)), M.Trace())
    with pytest.raises(StateError):
        M.rdn_backward(np.zeros((1, 3, 4, 4)), None)


def test_backward_zero_grad_and_keys(rng):
    cfg = small_cfg()
    p = M.init_params(cfg)
    tr = M.Trace()
    y = M.rdn_forward(rng.random((1, 3, 6, 6)).astype(np.float32), p, cfg, tr)
    grads, gx = M.rdn_backward(np.zeros_like(y), tr)
    assert list(grads) == list(p)
    assert all(not g.kernel.any() and not g.bias.any() for g in grads.values())
    assert not gx.any()


def test_gradients_tiny_full_model():
    cfg = M.RdnConfig(d_blocks=1, c_layers=2, growth=4, g0=4, scale=2)
    res = check_model(cfg, seed=0, size=8)
    assert res.n_skipped == 0
    assert res.max_rel_err <= 1e-5


@pytest.mark.parametrize("cfg", tiny_configs()[::3], ids=lambda c: c.ablation.name + c.topology)
def test_gradients_ablations_sampled(cfg):
    res = check_model(cfg, seed=1, per_tensor=6)
    assert res.max_rel_err <= 1e-5


def test_count_params_default_x2_model():
    assert M.count_params(M.RdnConfig(d_blocks=16, c_layers=8, growth=64, g0=64, scale=2)) == 22_123_395


def test_count_params_hand_enumeration():
    cfg = M.RdnConfig(d_blocks=1, c_layers=1, growth=1, g0=1, scale=1, topology=M.SAME_RES,
                      in_channels=1, out_channels=1)
    # sfe1, sfe2, rdb conv, final: 3x3 1->1 (10 each); lff 1x1 2->1 (3);
    # gff 1x1 1->1 (2); gff 3x3 1->1 (10)
    assert len(M.param_shapes(cfg)) == 7
    assert M.count_params(cfg) == 10 + 10 + 10 + 3 + 2 + 10 + 10


@settings(max_examples=20, deadline=None)
@given(configs)
def test_count_params_matches_allocation(cfg):
    assert M.count_params(cfg) == M.scalar_count(M.init_params(cfg, 0))


@settings(max_examples=50, deadline=None)
@given(configs)
def test_channel_arithmetic_from_shapes(cfg):
    shapes = M.param_shapes(cfg)
    for d in range(cfg.d_blocks):
        for c in range(1, cfg.c_layers + 1):
            fan = shapes[f"rdb.{d}.conv.{c - 1}"][1]
            if cfg.ablation.cm:
                assert fan == cfg.g0 + (c - 1) * cfg.growth
            else:
                assert fan == (cfg.g0 if c == 1 else (c - 1) * cfg.growth)


@settings(max_examples=15, deadline=None)
@given(configs, st.integers(3, 6), st.integers(3, 6))
def test_output_dims_follow_scale(cfg, h, w):
    x = np.zeros((1, cfg.in_channels, h, w), np.float32)
    y = M.rdn_forward(x, M.init_params(cfg, 0), cfg)
    assert y.shape == (1, cfg.out_channels, h * cfg.scale, w * cfg.scale)


def test_apply_ablation():
    cfg = M.RdnConfig()
    base = M.apply_ablation(cfg, {"cm": False, "lrl": False, "gff": False})
    assert base.ablation.name == "RDN_CM0LRL0GFF0"
    assert M.apply_ablation(cfg, "RDN_CM0LRL0GFF0") == base
    full = M.apply_ablation(base, M.Ablation())
    assert full.ablation == M.Ablation(cm=True, lrl=True, gff=True, lff=True)
    assert M.apply_ablation(base, "CM0LRL0GFF0") == base  # idempotent
    assert all(M.apply_ablation(cfg, ab).ablation.lff for ab in M.ALL_ABLATIONS)
    assert len({M.apply_ablation(cfg, ab).ablation for ab in M.ALL_ABLATIONS}) == 8
    with pytest.raises(InputError):
        M.apply_ablation(cfg, {"bn": True})


def test_check_params_detects_mismatch():
    cfg = small_cfg()
    p = M.init_params(cfg)
    M.check_params(p, cfg)
    with pytest.raises(DimensionError):
        M.check_params(p, dataclasses.replace(cfg, ablation=M.Ablation(gff=False)))
