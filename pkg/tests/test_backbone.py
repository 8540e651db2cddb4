import numpy as np
import pytest

from gradcheck import grad_error
from purerep import autodiff as ad
from purerep.backbone import (BackboneConfig, BackboneParams, _periodic_branch, _periodic_branch_reference,
                              ablate, encode, encode_series, encode_windows, init_params, load_checkpoint,
                              save_checkpoint)
from purerep.errors import (CheckpointMismatchError, ConfigError, NonFiniteError, ShapeError,
                            WindowTooLongError)

SMALL = dict(L_in=16, d_model=3, d_rep=8, kernel_sizes=(1, 2, 4))


def small_cfg(**kw):
    return BackboneConfig(**{**SMALL, **kw}).validate()


def views(rng, B, cfg):
    shape = (B, cfg.L_in) if cfg.n_inputs == 1 else (B, cfg.L_in, cfg.n_inputs)
    return rng.normal(size=shape), rng.normal(size=shape)


def trend_reference(x, params, cfg):
    """Full-length convs, branch average, last timestep: the unoptimised definition."""
    h = ad.linear(x, params.proj_W, params.proj_b)
    outs = [ad.conv1d_causal(h, params.trend_kernels[k]).data for k in cfg.kernel_sizes]
    return np.mean(outs, axis=0)[:, -1]


def test_default_shape_and_split():
    cfg = BackboneConfig().validate()
    assert (cfg.d_trend, cfg.d_periodic, cfg.n_freqs) == (160, 160, 169)
    params = init_params(cfg, np.random.default_rng(0))
    out = encode(views(np.random.default_rng(1), 3, cfg), params, cfg)
    assert out.shape == (3, 320)


@pytest.mark.parametrize("kw", [{}, {"trend_pool": "time"}, {"use_trend": False}, {"use_periodic": False},
                                {"n_inputs": 2}, {"L_in": 15}])
def test_encode_gradients(kw):
    """Full encode pass against central differences, 20 random trials."""
    cfg = small_cfg(**kw)
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        params = init_params(cfg, rng)
        view = views(rng, 2, cfg)
        worst = max(worst, grad_error(lambda: encode(view, params, cfg), params.values(), rng))
    assert worst < 1e-4


def test_fast_paths_match_reference():
    for n_inputs in (1, 3):
        cfg = small_cfg(L_in=33, n_inputs=n_inputs, kernel_sizes=(1, 2, 4, 8, 16, 32))
        rng = np.random.default_rng(n_inputs)
        params = init_params(cfg, rng)
        p, t = (v.reshape(4, cfg.L_in, n_inputs) for v in views(rng, 4, cfg))
        rep = encode((p, t), params, cfg).data
        np.testing.assert_allclose(rep[:, :cfg.d_trend], trend_reference(t, params, cfg), atol=1e-12)
        np.testing.assert_allclose(rep[:, cfg.d_trend:], _periodic_branch_reference(p, params, cfg).data,
                                   atol=1e-12)


def test_fast_periodic_gradients_match_reference():
    cfg = small_cfg(L_in=12)
    rng = np.random.default_rng(0)
    params = init_params(cfg, rng)
    x = rng.normal(size=(3, 12, 1))
    g = rng.normal(size=(3, cfg.d_periodic))
    grads = []
    for branch in (_periodic_branch, _periodic_branch_reference):
        params.zero_grad()
        branch(x, params, cfg).backward(g)
        grads.append([v.grad.copy() for v in params.values() if v is not None])
    for a, b in zip(*grads):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_zero_params_zero_output():
    cfg = small_cfg()
    params = init_params(cfg, np.random.default_rng(0))
    for v in params.values():
        v.data[...] = 0.0
    out = encode(views(np.random.default_rng(1), 2, cfg), params, cfg)
    assert np.all(out.data == 0.0)


def test_batch_permutation_equivariance():
    cfg = small_cfg()
    rng = np.random.default_rng(2)
    params = init_params(cfg, rng)
    p, t = views(rng, 5, cfg)
    perm = rng.permutation(5)
    a = encode((p, t), params, cfg).data
    b = encode((p[perm], t[perm]), params, cfg).data
    np.testing.assert_allclose(b, a[perm], atol=1e-13)


def test_periodic_branch_is_linear():
    cfg = small_cfg(use_trend=False)
    rng = np.random.default_rng(3)
    params = init_params(cfg, rng)
    params.proj_W.data[...] = 1.0
    params.proj_b.data[...] = 0.0
    a, b = rng.normal(size=(2, cfg.L_in)), rng.normal(size=(2, cfg.L_in))
    enc = lambda x: encode((x, x), params, cfg).data
    np.testing.assert_allclose(enc(2.0 * a - 0.5 * b), 2.0 * enc(a) - 0.5 * enc(b), atol=1e-9)


def test_encode_rejects_bad_inputs():
    cfg = small_cfg()
    params = init_params(cfg, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        encode((np.zeros((2, 15)), np.zeros((2, 15))), params, cfg)
    bad = np.zeros((2, 16))
    bad[0, 3] = np.nan
    with pytest.raises(NonFiniteError):
        encode((bad, bad), params, cfg)
    params.proj_W.data[...] = 1e308
    with pytest.raises(NonFiniteError), np.errstate(all="ignore"):
        encode((np.full((1, 16), 1e308), np.full((1, 16), 1e308)), params, cfg)


def test_encode_series_counts_and_causality():
    cfg = small_cfg()
    rng = np.random.default_rng(4)
    params = init_params(cfg, rng)
    x = rng.normal(size=cfg.L_in + 9)
    assert len(encode_series(x[:cfg.L_in], params, cfg)) == 1
    reps = encode_series(x, params, cfg)
    assert [t for t, _ in reps] == list(range(cfg.L_in - 1, cfg.L_in + 9))
    longer = np.concatenate([x, rng.normal(size=5) * 100])
    for (t, r), (t2, r2) in zip(reps, encode_series(longer, params, cfg)):
        assert t == t2
        np.testing.assert_allclose(r, r2, atol=1e-12)
    bumped = x.copy()
    bumped[20] += 50.0
    for (t, r), (_, r2) in zip(reps, encode_series(bumped, params, cfg)):
        if t < 20:
            np.testing.assert_allclose(r, r2, atol=1e-12)
    assert len(encode_series(x, params, cfg, stride=3)) == 4
    with pytest.raises(WindowTooLongError):
        encode_series(x[:10], params, cfg)


def test_encode_windows_matches_encode():
    cfg = small_cfg()
    rng = np.random.default_rng(5)
    params = init_params(cfg, rng)
    X = rng.normal(size=(7, cfg.L_in))
    np.testing.assert_allclose(encode_windows(X, params, cfg, batch_size=3), encode((X, X), params, cfg).data)


def test_ablate():
    cfg = BackboneConfig().validate()
    no_trend = ablate(cfg, "trend")
    assert (no_trend.d_trend, no_trend.d_periodic) == (0, 320)
    params = init_params(no_trend, np.random.default_rng(0))
    assert params.trend_kernels == {}
    no_per = ablate(cfg, "periodicity")
    assert (no_per.d_trend, no_per.d_periodic) == (320, 0)
    assert init_params(no_per, np.random.default_rng(0)).periodic_W is None
    with pytest.raises(ConfigError):
        ablate(no_trend, "periodicity")
    with pytest.raises(ConfigError):
        ablate(cfg, "both")


@pytest.mark.parametrize("kw", [dict(d_rep=7), dict(kernel_sizes=(1, 40)), dict(kernel_sizes=()),
                                dict(trend_pool="max"), dict(d_model=0)])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        small_cfg(**kw)


def test_init_bounds_and_seeding():
    cfg = small_cfg()
    a = init_params(cfg, np.random.default_rng(9))
    b = init_params(cfg, np.random.default_rng(9))
    for (name, va), (_, vb) in zip(a.named(), b.named()):
        assert np.array_equal(va.data, vb.data)
    k4 = a.trend_kernels[4].data
    assert np.abs(k4).max() <= 1 / np.sqrt(4 * cfg.d_model)
    assert a.periodic_W.data.shape == (cfg.n_freqs, cfg.d_model, cfg.d_periodic, 2)


def test_checkpoint_round_trip_bit_identical(tmp_path):
    cfg = small_cfg(trend_pool="time")
    rng = np.random.default_rng(6)
    params = init_params(cfg, rng)
    view = views(rng, 4, cfg)
    path = save_checkpoint(tmp_path / "c.npz", cfg, params, seed=3, step=17,
                           groups={"queue": rng.normal(size=(5, 8))}, meta={"note": "x"})
    cfg2, params2, meta, groups = load_checkpoint(path)
    assert cfg2 == cfg and meta["seed"] == 3 and meta["step"] == 17 and meta["note"] == "x"
    assert groups["queue"].shape == (5, 8)
    assert np.array_equal(encode(view, params, cfg).data, encode(view, params2, cfg2).data)


def test_checkpoint_rejects_mismatch(tmp_path):
    cfg = small_cfg()
    params = init_params(cfg, np.random.default_rng(0))
    arrays = params.arrays()
    arrays["proj_W"] = np.zeros((2, 3))
    path = save_checkpoint(tmp_path / "bad.npz", cfg, BackboneParams.from_arrays(arrays), seed=0, step=0)
    with pytest.raises(CheckpointMismatchError):
        load_checkpoint(path)
    np.savez(tmp_path / "other.npz", meta=np.array('{"format": "something"}'))
    with pytest.raises(CheckpointMismatchError):
        load_checkpoint(tmp_path / "other.npz")
