import numpy as np
import pytest

from purerep.errors import ConfigError, ProbeError
from purerep.synthetic import (SynthSpec, generate, pca_2d, periodic, probe_windows, separability_probe,
                               shuffled_baseline, trend)


def test_default_set():
    data = generate(SynthSpec(), 0)
    assert len(data.series) == 6 and data.matrix().shape == (1000, 6)
    assert data.labels() == [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]
    assert SynthSpec().trends == ((2.0, 1.5, 500.0), (-2.0, -1.5, 500.0))
    assert SynthSpec().periods == ((20.0, 0.0, 3.0), (50.0, 0.5, 3.0), (100.0, 1.0, 3.0))


def test_noiseless_start_value():
    data = generate(SynthSpec(noise_std=0.0), 0)
    for s in data.series:
        b0 = SynthSpec().trends[s.trend_label][0]
        _, phase, amp = SynthSpec().periods[s.period_label]
        assert s.values[0] == pytest.approx(b0 + amp * np.sin(phase), abs=1e-12)


def test_exact_periodicity_without_noise():
    spec = SynthSpec(noise_std=0.0)
    data = generate(spec, 0)
    for s in data.series:
        period = int(spec.periods[s.period_label][0])
        b0, b1, b2 = spec.trends[s.trend_label]
        diff = s.values[period:] - s.values[:-period]
        np.testing.assert_allclose(diff, -b1 * period / b2, atol=1e-9)


def test_determinism_and_noise_scale():
    a, b = generate(SynthSpec(), 5).matrix(), generate(SynthSpec(), 5).matrix()
    assert np.array_equal(a, b)
    assert not np.array_equal(a, generate(SynthSpec(), 6).matrix())
    clean = generate(SynthSpec(noise_std=0.0), 5).matrix()
    resid = a - clean
    assert abs(resid.std() - 0.3) < 0.02


def test_frequency_mode():
    t = np.arange(10)
    np.testing.assert_allclose(periodic(t, 0.5, 0.1, 2.0, "frequency"), 2.0 * np.sin(0.5 * t + 0.1))
    np.testing.assert_allclose(periodic(t, 20.0, 0.0, 1.0), np.sin(2 * np.pi * t / 20))
    np.testing.assert_allclose(trend(t, 2.0, 1.5, 500.0), 2.0 - 1.5 * t / 500)


@pytest.mark.parametrize("kw", [dict(length=0), dict(noise_std=-1.0), dict(trends=((1.0, 1.0, 0.0),)),
                                dict(period_mode="angle")])
def test_spec_validation(kw):
    with pytest.raises(ConfigError):
        SynthSpec(**kw).validate()


def grid_points(spread=0.05, per=4, seed=0):
    """Well separated clusters: one per (trend, period) pair."""
    rng = np.random.default_rng(seed)
    X, tl, pl = [], [], []
    for i in range(2):
        for j in range(3):
            X.append(np.array([5.0 * i, 5.0 * j]) + spread * rng.normal(size=(per, 2)))
            tl += [i] * per
            pl += [j] * per
    return np.concatenate(X), np.array(tl), np.array(pl)


def test_probe_perfect_on_separated_clusters():
    X, tl, pl = grid_points()
    res = separability_probe(X, tl, pl)
    assert res.trend_score == 1.0 and res.period_score == 1.0
    assert res.pca.shape == (len(X), 2)
    np.testing.assert_allclose(res.pca.mean(0), 0.0, atol=1e-12)


def test_probe_scores_in_unit_interval():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(36, 5))
    tl, pl = np.repeat([0, 1], 18), np.tile(np.repeat([0, 1, 2], 6), 2)
    res = separability_probe(X, tl, pl)
    assert 0.0 <= res.trend_score <= 1.0 and 0.0 <= res.period_score <= 1.0


def test_probe_single_class_rejected():
    X = np.zeros((6, 2))
    with pytest.raises(ProbeError):
        separability_probe(X, np.zeros(6), np.arange(6) % 3)


def test_shuffled_baseline_near_chance():
    X, tl, pl = grid_points(per=9)
    t_base, p_base = shuffled_baseline(X, tl, pl, np.random.default_rng(0), n_shuffles=100)
    assert abs(t_base - 1 / 2) < 0.15 and abs(p_base - 1 / 3) < 0.15


def test_pca_two_columns_for_1d_input():
    coords = pca_2d(np.arange(5.0)[:, None])
    assert coords.shape == (5, 2) and np.all(coords[:, 1] == 0)


def test_probe_windows(synth_ds):
    X, owner = probe_windows(synth_ds, 128, 100)
    assert X.shape == (6 * 9, 128)
    np.testing.assert_array_equal(np.bincount(owner), [9] * 6)
    np.testing.assert_array_equal(X[10], synth_ds.values[100:228, 1])
