"""Positive-pair generation: top-k Fourier reconstruction and moving-average trends."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, FrequencyCountError, WindowSizeError

MODES = ("clear", "common_trans")


@dataclass
class AugmentConfig:
    k1: int = 5
    k2: int = 20
    t1: int = 1
    t2: int = 5
    mode: str = "clear"
    strict_distinct: bool = False
    # common_trans magnitudes
    scale_std: float = 0.5
    shift_std: float = 0.5
    jitter_std: float = 0.3

    def validate(self, length: int) -> "AugmentConfig":
        if self.mode not in MODES:
            raise ConfigError(f"augment.mode must be one of {MODES}, got {self.mode!r}")
        if not 1 <= self.k1 <= self.k2:
            raise ConfigError(f"need 1 <= k1 <= k2, got k1={self.k1}, k2={self.k2}")
        if not 0 <= self.t1 <= self.t2:
            raise ConfigError(f"need 0 <= t1 <= t2, got t1={self.t1}, t2={self.t2}")
        if self.k2 > length // 2 + 1:
            raise ConfigError(f"k2={self.k2} exceeds the {length // 2 + 1} spectrum bins of length {length}")
        if 2 * self.t2 + 1 > length:
            raise ConfigError(f"t2={self.t2} gives a window longer than {length}")
        return self


@dataclass
class ViewPair:
    """Two views of one window, each a (periodic, trend) pair of equal-length arrays."""

    view_q: tuple
    view_k: tuple
    k_q: int
    k_k: int
    t_q: int
    t_k: int


TIE_RTOL = 1e-10


def _tie_key(amp: np.ndarray) -> np.ndarray:
    """Amplitudes quantised relative to the row maximum.

    Mathematically equal amplitudes come out of the FFT a few ulps apart;
    quantising first lets the stable sort hand ties to the lower bin.
    """
    top = amp.max(axis=-1, keepdims=True)
    return np.round(amp / np.where(top > 0, top, 1.0) / TIE_RTOL)


def periodic_sample_batch(x: np.ndarray, ks) -> np.ndarray:
    """Row-wise top-k spectral reconstruction of ``x`` [B, L] with per-row ``ks``."""
    x = np.asarray(x, dtype=np.float64)
    n_bins = x.shape[1] // 2 + 1
    ks = np.broadcast_to(np.asarray(ks), (x.shape[0],))
    if np.any(ks < 1) or np.any(ks > n_bins):
        raise FrequencyCountError(f"k must lie in [1, {n_bins}], got {ks.min()}..{ks.max()}")
    spec = np.fft.rfft(x, axis=1)
    order = np.argsort(-_tie_key(np.abs(spec)), axis=1, kind="stable")
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(n_bins)[None, :].repeat(x.shape[0], 0), axis=1)
    spec = np.where(rank < ks[:, None], spec, 0.0)
    return np.fft.irfft(spec, n=x.shape[1], axis=1)


def periodic_sample(x, k: int) -> np.ndarray:
    """Keep the ``k`` largest-amplitude real-FFT bins of ``x`` and invert."""
    x = np.asarray(x, dtype=np.float64)
    return periodic_sample_batch(x[None, :], k)[0]


def trend_sample_batch(x: np.ndarray, ts) -> np.ndarray:
    """Row-wise centred moving average (window 2t+1, edge replication)."""
    x = np.asarray(x, dtype=np.float64)
    length = x.shape[1]
    ts = np.broadcast_to(np.asarray(ts), (x.shape[0],))
    if np.any(ts < 0):
        raise WindowSizeError("t must be >= 0")
    if np.any(2 * ts + 1 > length):
        raise WindowSizeError(f"window 2*{ts.max()}+1 exceeds series length {length}")
    out = np.empty_like(x)
    for t in np.unique(ts):
        rows = ts == t
        if t == 0:
            out[rows] = x[rows]
            continue
        padded = np.pad(x[rows], ((0, 0), (t, t)), mode="edge")
        out[rows] = sliding_window_view(padded, 2 * t + 1, axis=1).mean(axis=-1)
    return out


def trend_sample(x, t: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return trend_sample_batch(x[None, :], t)[0]


def _draw_pair(rng: np.random.Generator, lo: int, hi: int, strict: bool) -> tuple[int, int]:
    a = int(rng.integers(lo, hi + 1))
    b = int(rng.integers(lo, hi + 1))
    while strict and hi > lo and b == a:
        b = int(rng.integers(lo, hi + 1))
    return a, b


def make_view_pair(x, cfg: AugmentConfig, rng: np.random.Generator) -> ViewPair:
    x = np.asarray(x, dtype=np.float64)
    cfg.validate(len(x))
    k_q, k_k = _draw_pair(rng, cfg.k1, cfg.k2, cfg.strict_distinct)
    t_q, t_k = _draw_pair(rng, cfg.t1, cfg.t2, cfg.strict_distinct)
    return ViewPair(
        view_q=(periodic_sample(x, k_q), trend_sample(x, t_q)),
        view_k=(periodic_sample(x, k_k), trend_sample(x, t_k)),
        k_q=k_q, k_k=k_k, t_q=t_q, t_k=t_k,
    )


def common_transform(x, rng: np.random.Generator, scale_std: float = 0.5,
                     shift_std: float = 0.5, jitter_std: float = 0.3) -> np.ndarray:
    """Scale, shift and jitter: ``s*x + m + eps``."""
    x = np.asarray(x, dtype=np.float64)
    s = float(np.clip(rng.normal(1.0, scale_std), 0.1, 2.0))
    m = float(rng.normal(0.0, shift_std))
    eps = rng.normal(0.0, jitter_std, size=x.shape)
    return s * x + m + eps


def make_views(batch: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator):
    """Build both views for a whole batch of windows.

    ``batch`` is [B, L] (channel independent) or [B, L, C] (channel mix; the
    same draw is applied to every variable of a window).  Returns
    ``((periodic_q, trend_q), (periodic_k, trend_k))`` with arrays shaped
    like ``batch``.
    """
    batch = np.asarray(batch, dtype=np.float64)
    mixed = batch.ndim == 3
    B, L = batch.shape[:2]
    C = batch.shape[2] if mixed else 1
    cfg.validate(L)
    rows = batch.transpose(0, 2, 1).reshape(B * C, L) if mixed else batch

    def back(a):
        return a.reshape(B, C, L).transpose(0, 2, 1) if mixed else a

    if cfg.mode == "common_trans":
        views = []
        for _ in range(2):
            s = np.clip(rng.normal(1.0, cfg.scale_std, size=B), 0.1, 2.0)
            m = rng.normal(0.0, cfg.shift_std, size=B)
            shape = (B, 1, 1) if mixed else (B, 1)
            v = s.reshape(shape) * batch + m.reshape(shape) + rng.normal(0.0, cfg.jitter_std, size=batch.shape)
            views.append((v, v))
        return views[0], views[1]

    draws = [_draw_pair(rng, cfg.k1, cfg.k2, cfg.strict_distinct)
             + _draw_pair(rng, cfg.t1, cfg.t2, cfg.strict_distinct) for _ in range(B)]
    k_q, k_k, t_q, t_k = (np.repeat(np.array(col), C) for col in zip(*draws))
    q = (back(periodic_sample_batch(rows, k_q)), back(trend_sample_batch(rows, t_q)))
    k = (back(periodic_sample_batch(rows, k_k)), back(trend_sample_batch(rows, t_k)))
    return q, k
