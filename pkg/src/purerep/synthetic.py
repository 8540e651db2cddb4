"""Two-trend x three-periodicity synthetic series and a separability probe."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ProbeError

DEFAULT_TRENDS = ((2.0, 1.5, 500.0), (-2.0, -1.5, 500.0))
DEFAULT_PERIODS = ((20.0, 0.0, 3.0), (50.0, 0.5, 3.0), (100.0, 1.0, 3.0))


@dataclass
class SynthSpec:
    trends: tuple = DEFAULT_TRENDS
    periods: tuple = DEFAULT_PERIODS
    length: int = 1000
    noise_std: float = 0.3
    period_mode: str = "period"  # or "frequency": first entry is angular frequency in rad/step

    def validate(self) -> "SynthSpec":
        if self.length < 1:
            raise ConfigError("length must be >= 1")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")
        if any(b2 == 0 for _, _, b2 in self.trends):
            raise ConfigError("beta2 must be non-zero")
        if self.period_mode not in ("period", "frequency"):
            raise ConfigError(f"period_mode must be 'period' or 'frequency', got {self.period_mode!r}")
        return self


@dataclass
class SynthSeries:
    values: np.ndarray
    trend_label: int
    period_label: int


@dataclass
class SynthSet:
    series: list = field(default_factory=list)

    def matrix(self) -> np.ndarray:
        """[length, n_series] for building a dataset."""
        return np.stack([s.values for s in self.series], axis=1)

    def labels(self) -> list[tuple[int, int]]:
        return [(s.trend_label, s.period_label) for s in self.series]


def trend(t, beta0: float, beta1: float, beta2: float) -> np.ndarray:
    return beta0 - beta1 * np.asarray(t, dtype=np.float64) / beta2


def periodic(t, first: float, phase: float, amplitude: float, mode: str = "period") -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    omega = 2 * np.pi / first if mode == "period" else first
    return amplitude * np.sin(omega * t + phase)


def generate(spec: SynthSpec, seed) -> SynthSet:
    """x_ij(t) = g_i(t) + eps_t + p_j(t) for every (trend i, periodicity j) pair."""
    spec.validate()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    t = np.arange(spec.length)
    out = SynthSet()
    for i, betas in enumerate(spec.trends):
        for j, (first, phase, amp) in enumerate(spec.periods):
            noise = rng.normal(0.0, spec.noise_std, size=spec.length) if spec.noise_std else 0.0
            x = trend(t, *betas) + noise + periodic(t, first, phase, amp, spec.period_mode)
            out.series.append(SynthSeries(x, i, j))
    return out


def _loo_nearest_centroid(X: np.ndarray, y: np.ndarray) -> float:
    classes, y_idx = np.unique(y, return_inverse=True)
    if len(classes) < 2:
        raise ProbeError("need at least two classes")
    counts = np.bincount(y_idx)
    sums = np.zeros((len(classes), X.shape[1]))
    np.add.at(sums, y_idx, X)
    correct = 0
    for i in range(len(X)):
        own = y_idx[i]
        cents = sums.copy()
        n = counts.astype(np.float64).copy()
        cents[own] -= X[i]
        n[own] -= 1
        valid = n > 0
        cents[valid] /= n[valid][:, None]
        d = np.where(valid, ((cents - X[i]) ** 2).sum(axis=1), np.inf)
        correct += int(np.argmin(d) == own)
    return correct / len(X)


def pca_2d(X: np.ndarray) -> np.ndarray:
    Xc = X - X.mean(axis=0)
    _, _, vt = np.linalg.svd(Xc, full_matrices=False)
    coords = Xc @ vt[:2].T
    if coords.shape[1] < 2:
        coords = np.pad(coords, ((0, 0), (0, 2 - coords.shape[1])))
    return coords - coords.mean(axis=0)


@dataclass
class ProbeResult:
    trend_score: float
    period_score: float
    pca: np.ndarray


def separability_probe(reps, trend_labels, period_labels) -> ProbeResult:
    """Leave-one-out nearest-centroid accuracy per factor, plus 2-D PCA coordinates.

    Each factor is scored inside every level of the other factor (one trend at
    a time for periodicity, one periodicity at a time for trend) and the
    accuracies are averaged, weighted by group size.
    """
    X = np.asarray(reps, dtype=np.float64)
    tl = np.asarray(trend_labels)
    pl = np.asarray(period_labels)
    if len(np.unique(tl)) < 2 or len(np.unique(pl)) < 2:
        raise ProbeError("each factor needs at least two distinct labels")

    def conditional(target, other):
        total, weight = 0.0, 0
        for level in np.unique(other):
            rows = other == level
            if len(np.unique(target[rows])) < 2:
                continue
            total += _loo_nearest_centroid(X[rows], target[rows]) * rows.sum()
            weight += rows.sum()
        if not weight:
            raise ProbeError("no group contains two classes")
        return total / weight

    return ProbeResult(conditional(tl, pl), conditional(pl, tl), pca_2d(X))


def shuffled_baseline(reps, trend_labels, period_labels, rng: np.random.Generator, n_shuffles: int = 100):
    """Mean probe scores with each factor's labels permuted inside the other factor's groups."""
    tl = np.asarray(trend_labels)
    pl = np.asarray(period_labels)
    trend_scores, period_scores = [], []
    for _ in range(n_shuffles):
        t_shuf, p_shuf = tl.copy(), pl.copy()
        for level in np.unique(pl):
            rows = np.flatnonzero(pl == level)
            t_shuf[rows] = rng.permutation(tl[rows])
        for level in np.unique(tl):
            rows = np.flatnonzero(tl == level)
            p_shuf[rows] = rng.permutation(pl[rows])
        trend_scores.append(separability_probe(reps, t_shuf, pl).trend_score)
        period_scores.append(separability_probe(reps, tl, p_shuf).period_score)
    return float(np.mean(trend_scores)), float(np.mean(period_scores))


def probe_windows(ds, lookback: int, stride: int):
    """Sliding windows of every series (one dataset variable each), labelled by series index."""
    X, owner = [], []
    for j in range(ds.n_vars):
        w = sliding_window_view(ds.values[:, j], lookback)[::stride]
        X.append(w)
        owner += [j] * len(w)
    return np.concatenate(X), np.array(owner)
