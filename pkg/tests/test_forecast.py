import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from purerep.backbone import BackboneConfig, init_params
from purerep.data import SeriesDataset, SplitSpec
from purerep.errors import ConfigError, SingularMatrixError
from purerep.forecast import (DEFAULT_ALPHAS, REPORT_FIELDS, EvalOptions, ForecastReport, evaluate, fit_linear,
                              fit_ridge, mean_reports, mse_mae, select_alpha, write_reports)


def oracle(R, Y, alpha):
    """Dense normal equations with an explicit inverse."""
    rm, ym = R.mean(0), Y.mean(0)
    Rc, Yc = R - rm, Y - ym
    W = np.linalg.inv(Rc.T @ Rc + alpha * np.eye(R.shape[1])) @ Rc.T @ Yc
    return W, ym - rm @ W


def objective(R, Y, W, b, alpha):
    return np.sum((R @ W + b - Y) ** 2) + alpha * np.sum(W ** 2)


def test_matches_normal_equation_oracle():
    for seed in range(50):
        rng = np.random.default_rng(seed)
        M, d, T = rng.integers(5, 40), rng.integers(1, 8), rng.integers(1, 4)
        R, Y = rng.normal(size=(M, d)), rng.normal(size=(M, T))
        alpha = float(rng.choice([1e-3, 0.1, 1.0, 10.0]))
        model = fit_ridge(R, Y, alpha)
        W, b = oracle(R, Y, alpha)
        np.testing.assert_allclose(model.W, W, atol=1e-8)
        np.testing.assert_allclose(model.b, b, atol=1e-8)


def test_random_20x5_problem():
    rng = np.random.default_rng(0)
    R, Y = rng.normal(size=(20, 5)), rng.normal(size=(20, 2))
    np.testing.assert_allclose(fit_ridge(R, Y, 0.5).W, oracle(R, Y, 0.5)[0], atol=1e-8)


def test_exact_fit_alpha_zero():
    rng = np.random.default_rng(1)
    R = rng.normal(size=(60, 10))
    Y = R @ rng.normal(size=(10, 3)) + 0.7
    model = fit_ridge(R, Y, 0.0)
    assert np.abs(model.predict(R) - Y).max() < 1e-8


def test_huge_alpha_shrinks_to_mean():
    rng = np.random.default_rng(2)
    R, Y = rng.normal(size=(30, 4)), rng.normal(size=(30, 2))
    model = fit_ridge(R, Y, 1e12)
    assert np.abs(model.W).max() < 1e-6
    np.testing.assert_allclose(model.predict(R), np.broadcast_to(Y.mean(0), Y.shape), atol=1e-5)


def test_singular_alpha_zero_raises():
    R = np.ones((10, 3))
    with pytest.raises(SingularMatrixError):
        fit_ridge(R, np.zeros((10, 1)), 0.0)
    R = np.random.default_rng(3).normal(size=(10, 3))
    with pytest.raises(SingularMatrixError):
        fit_ridge(np.column_stack([R, R[:, 0]]), np.zeros((10, 1)), 0.0)


def test_bad_inputs():
    with pytest.raises(ConfigError):
        fit_ridge(np.zeros((0, 3)), np.zeros((0, 1)), 1.0)
    with pytest.raises(ConfigError):
        fit_ridge(np.full((3, 2), np.nan), np.zeros((3, 1)), 1.0)
    with pytest.raises(ConfigError):
        fit_ridge(np.zeros((3, 2)), np.zeros((3, 1)), -1.0)


def test_linear_min_norm_on_rank_deficiency():
    rng = np.random.default_rng(4)
    base = rng.normal(size=(25, 3))
    R = np.column_stack([base, base[:, 1] - base[:, 2]])
    Y = rng.normal(size=(25, 2))
    model = fit_linear(R, Y)
    Rc, Yc = R - R.mean(0), Y - Y.mean(0)
    U, s, Vt = np.linalg.svd(Rc, full_matrices=False)
    s_inv = np.where(s > s.max() * 1e-12, 1 / s, 0.0)
    np.testing.assert_allclose(model.W, Vt.T @ np.diag(s_inv) @ U.T @ Yc, atol=1e-10)


def test_linear_equals_ridge_zero_on_full_rank():
    rng = np.random.default_rng(5)
    R, Y = rng.normal(size=(40, 6)), rng.normal(size=(40, 3))
    np.testing.assert_allclose(fit_linear(R, Y).W, fit_ridge(R, Y, 0.0).W, atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.1, 1.0, 10.0]))
def test_ridge_local_and_global_optimality(seed, alpha):
    rng = np.random.default_rng(seed)
    R, Y = rng.normal(size=(15, 4)), rng.normal(size=(15, 2))
    m = fit_ridge(R, Y, alpha)
    # the bias is unpenalised, so the centred objective is what ridge minimises
    best = objective(R, Y, m.W, m.b, alpha)
    for i in range(4):
        for j in range(2):
            for delta in (1e-3, -1e-3):
                W = m.W.copy()
                W[i, j] += delta
                assert objective(R, Y, W, m.b, alpha) >= best - 1e-12
    for _ in range(50):
        W = m.W + rng.normal(scale=0.1, size=m.W.shape)
        b = m.b + rng.normal(scale=0.1, size=m.b.shape)
        assert objective(R, Y, W, b, alpha) >= best


def test_select_alpha():
    rng = np.random.default_rng(6)
    R = rng.normal(size=(80, 5))
    W = rng.normal(size=(5, 2))
    Rv = rng.normal(size=(30, 5))
    assert select_alpha(R, R @ W, Rv, Rv @ W) == min(DEFAULT_ALPHAS)
    assert select_alpha(R, R @ W, Rv, Rv @ W, grid=[7.0]) == 7.0
    # identical validation scores: the smaller alpha wins
    Y = np.zeros((80, 1))
    assert select_alpha(R, Y, Rv, np.zeros((30, 1)), grid=[5.0, 1.0, 3.0]) == 1.0
    with pytest.raises(ConfigError):
        select_alpha(R, R @ W, Rv, Rv @ W, grid=[])


def test_mse_mae():
    y = np.random.default_rng(7).normal(size=(10, 3))
    assert mse_mae(y, y) == (0.0, 0.0)
    mse, mae = mse_mae(np.zeros(4), np.array([1.0, -1.0, 3.0, -3.0]))
    assert (mse, mae) == (5.0, 2.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_mae_squared_le_mse_and_order_invariance(seed):
    rng = np.random.default_rng(seed)
    p, t = rng.normal(size=(12, 3)), rng.normal(size=(12, 3))
    mse, mae = mse_mae(p, t)
    assert mae ** 2 <= mse + 1e-12
    perm = rng.permutation(3)
    m2, a2 = mse_mae(p[:, perm], t[:, perm])
    assert m2 == pytest.approx(mse, rel=1e-12) and a2 == pytest.approx(mae, rel=1e-12)


def toy_dataset(n=400, c=3, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(n)
    raw = np.stack([np.sin(2 * np.pi * t / 24 + j) + 0.1 * rng.normal(size=n) for j in range(c)], axis=1)
    return SeriesDataset.from_array(raw, [f"v{j}" for j in range(c)], SplitSpec("ratios", 0.6, 0.2, 0.2), "toy")


def test_evaluate_protocols():
    ds = toy_dataset()
    cfg = BackboneConfig(L_in=24, d_model=4, d_rep=8, kernel_sizes=(1, 2, 4)).validate()
    params = init_params(cfg, np.random.default_rng(0))
    opts = EvalOptions(horizons=(4, 8))
    multi = evaluate(params, cfg, ds, opts, seed=3, fingerprint="abc")
    assert [r.horizon for r in multi] == [4, 8]
    test_len = 80
    assert multi[0].n_windows == 3 * (test_len - 24 - 4 + 1)
    for r in multi:
        assert r.mse >= 0 and r.mae >= 0 and r.mae ** 2 <= r.mse and r.alpha_selected in DEFAULT_ALPHAS
        assert r.seed == 3 and r.fingerprint == "abc" and r.split == "test"
    again = evaluate(params, cfg, ds, opts, seed=3, fingerprint="abc")
    assert [r.to_dict() for r in again] == [r.to_dict() for r in multi]
    uni = evaluate(params, cfg, ds, EvalOptions(horizons=(4,), protocol="univariate"))
    assert uni[0].n_windows == test_len - 24 - 4 + 1
    with pytest.raises(ConfigError):
        evaluate(params, cfg, ds, EvalOptions(horizons=(4,), protocol="bogus"))


def test_evaluate_matches_manual_pipeline():
    """Univariate, origin data: the ridge on raw windows computed by hand."""
    ds = toy_dataset(seed=1)
    cfg = BackboneConfig(L_in=12, d_model=2, d_rep=4, kernel_sizes=(1,)).validate()
    h = 5
    rep = evaluate(None, cfg, ds, EvalOptions(horizons=(h,), protocol="univariate", target="v1",
                                              origin_data=True))[0]

    def pairs(split):
        lo, hi = ds.range(split)
        x = ds.values[lo:hi, 1]
        n = len(x) - 12 - h + 1
        return (np.stack([x[i:i + 12] for i in range(n)]), np.stack([x[i + 12:i + 12 + h] for i in range(n)]))

    (Rt, Yt), (Rv, Yv), (Re, Ye) = pairs("train"), pairs("val"), pairs("test")
    alpha = select_alpha(Rt, Yt, Rv, Yv)
    mse, mae = mse_mae(fit_ridge(Rt, Yt, alpha).predict(Re), Ye)
    assert rep.alpha_selected == alpha
    assert rep.mse == pytest.approx(mse, rel=1e-12) and rep.mae == pytest.approx(mae, rel=1e-12)


def test_evaluate_channel_mix_and_linear_head():
    ds = toy_dataset()
    cfg = BackboneConfig(L_in=24, n_inputs=3, d_model=4, d_rep=8, kernel_sizes=(1, 2)).validate()
    params = init_params(cfg, np.random.default_rng(0))
    rep = evaluate(params, cfg, ds, EvalOptions(horizons=(4,), channel_mix=True, linear_head=True))[0]
    assert rep.alpha_selected == 0.0 and rep.n_windows == 80 - 24 - 4 + 1
    with pytest.raises(ConfigError):
        evaluate(params, cfg, ds, EvalOptions(horizons=(4,), channel_mix=True, protocol="univariate"))
    with pytest.raises(ConfigError):
        evaluate(None, cfg, ds, EvalOptions(horizons=(4,)))


def test_reports_and_means(tmp_path):
    reps = [ForecastReport("d", 24, "test", m, a, 0.1, s, "fp") for s, (m, a) in enumerate([(1.0, 0.5), (3.0, 1.5)])]
    mean = mean_reports(reps)
    assert len(mean) == 1 and mean[0].seed == "mean" and mean[0].mse == 2.0 and mean[0].mae == 1.0
    csv_path, jsonl_path = write_reports(reps + mean, tmp_path)
    lines = jsonl_path.read_text().splitlines()
    assert len(lines) == 3 and list(json.loads(lines[0])) == list(REPORT_FIELDS)
    assert csv_path.read_text().splitlines()[0] == ",".join(REPORT_FIELDS)
