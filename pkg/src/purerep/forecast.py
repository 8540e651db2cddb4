"""Ridge forecasting head on frozen representations, and the MSE/MAE protocol."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import linalg

from .backbone import BackboneConfig, BackboneParams, encode_windows
from .data import SeriesDataset
from .errors import ConfigError, SingularMatrixError, WindowTooLongError

DEFAULT_ALPHAS = (0.1, 0.2, 0.5, 1, 2, 5, 10, 20, 50, 100, 200, 500, 1000)
REPORT_SCHEMA_VERSION = 1
SINGULAR_PIVOT_RATIO = 1e-7
REPORT_FIELDS = ("schema_version", "dataset", "protocol", "variant", "horizon", "split", "mse", "mae",
                 "alpha_selected", "seed", "fingerprint", "n_windows")


@dataclass
class RidgeModel:
    W: np.ndarray
    b: np.ndarray
    alpha: float
    horizon: int

    def predict(self, R) -> np.ndarray:
        return np.asarray(R, dtype=np.float64) @ self.W + self.b


class _Moments:
    """Centred cross-products shared by every alpha on one training set."""

    def __init__(self, R, Y):
        R = np.asarray(R, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y[:, None]
        if R.ndim != 2 or len(R) != len(Y) or len(R) < 1:
            raise ConfigError(f"ridge needs R [M, d] and Y [M, T] with M >= 1, got {R.shape}, {Y.shape}")
        if not (np.isfinite(R).all() and np.isfinite(Y).all()):
            raise ConfigError("ridge inputs must be finite")
        self.r_mean = R.mean(axis=0)
        self.y_mean = Y.mean(axis=0)
        Rc = R - self.r_mean
        self.gram = Rc.T @ Rc
        self.cross = Rc.T @ (Y - self.y_mean)
        self.horizon = Y.shape[1]

    def solve(self, alpha: float) -> RidgeModel:
        if alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {alpha}")
        d = self.gram.shape[0]
        A = self.gram + alpha * np.eye(d)
        try:
            c, low = linalg.cho_factor(A, lower=True, check_finite=False)
        except linalg.LinAlgError:
            raise SingularMatrixError("regularised Gram matrix is not positive definite; use alpha > 0") from None
        diag = np.abs(np.diag(c))
        # rank loss leaves a pivot near sqrt(eps) * scale; the Gram route cannot resolve finer
        if alpha == 0 and diag.min() < SINGULAR_PIVOT_RATIO * diag.max():
            raise SingularMatrixError("Gram matrix is numerically singular; use alpha > 0")
        W = linalg.cho_solve((c, low), self.cross, check_finite=False)
        return RidgeModel(W, self.y_mean - self.r_mean @ W, float(alpha), self.horizon)


def fit_ridge(R, Y, alpha: float) -> RidgeModel:
    """argmin ||Rc W - Yc||^2 + alpha ||W||^2 on centred data; the bias restores the means."""
    return _Moments(R, Y).solve(alpha)


def fit_linear(R, Y) -> RidgeModel:
    """Ordinary least squares; minimum-norm solution when R is rank deficient."""
    try:
        return fit_ridge(R, Y, 0.0)
    except SingularMatrixError:
        pass
    R = np.asarray(R, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    r_mean, y_mean = R.mean(axis=0), Y.mean(axis=0)
    W = np.linalg.lstsq(R - r_mean, Y - y_mean, rcond=None)[0]
    return RidgeModel(W, y_mean - r_mean @ W, 0.0, Y.shape[1])


def mse_mae(pred, target) -> tuple[float, float]:
    err = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return float(np.mean(err ** 2)), float(np.mean(np.abs(err)))


def select_alpha(R_train, Y_train, R_val, Y_val, grid=DEFAULT_ALPHAS) -> float:
    """Grid alpha with the lowest validation MSE; ties go to the smaller alpha."""
    grid = sorted(float(a) for a in grid)
    if not grid:
        raise ConfigError("alpha grid is empty")
    if len(grid) == 1:
        return grid[0]
    moments = _Moments(R_train, Y_train)
    best, best_mse = grid[0], np.inf
    for alpha in grid:
        try:
            model = moments.solve(alpha)
        except SingularMatrixError:
            continue
        mse = mse_mae(model.predict(R_val), Y_val)[0]
        if mse < best_mse:
            best, best_mse = alpha, mse
    return best


@dataclass
class ForecastReport:
    dataset: str
    horizon: int
    split: str
    mse: float
    mae: float
    alpha_selected: float
    seed: object
    fingerprint: str
    protocol: str = "multivariate"
    variant: str = "default"
    n_windows: int = 0
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in REPORT_FIELDS}


@dataclass
class EvalOptions:
    horizons: tuple = (24, 48, 168, 336, 720)
    protocol: str = "multivariate"  # or "univariate"
    target: str | None = None  # univariate target variable; default last column
    alphas: tuple = DEFAULT_ALPHAS
    origin_data: bool = False
    linear_head: bool = False
    channel_mix: bool = False
    batch_size: int = 1024


class _SplitFeatures:
    """Features of every stride-1 window position in one split, computed once."""

    def __init__(self, ds, split, L_in, max_h, variables, featurize, channel_mix):
        lo, hi = ds.range(split)
        if hi - lo < L_in + max_h:
            raise WindowTooLongError(f"{split} range has {hi - lo} steps, need {L_in + max_h}")
        self.n_all = hi - lo - L_in + 1
        self.block = ds.values[lo:hi]
        self.L_in = L_in
        self.channel_mix = channel_mix
        self.variables = [None] if channel_mix else list(variables)
        self.features = []
        for v in self.variables:
            series = self.block if channel_mix else self.block[:, v]
            win = sliding_window_view(series, L_in, axis=0)[: self.n_all]
            if channel_mix:
                win = win.transpose(0, 2, 1)
            self.features.append(featurize(win))

    def pairs(self, horizon: int):
        n = self.n_all - horizon
        if n < 1:
            raise ConfigError(f"split too short for horizon {horizon}")
        R, Y = [], []
        for v, feats in zip(self.variables, self.features):
            series = self.block if self.channel_mix else self.block[:, v]
            idx = self.L_in + np.arange(n)[:, None] + np.arange(horizon)[None, :]
            tgt = series[idx]
            R.append(feats[:n])
            Y.append(tgt.reshape(n, -1))
        return np.concatenate(R), np.concatenate(Y)


def evaluate(params: BackboneParams | None, bb_cfg: BackboneConfig, ds: SeriesDataset, opts: EvalOptions,
             seed=0, fingerprint: str = "", variant: str = "default") -> list[ForecastReport]:
    """Fit on train, pick alpha on val, report test MSE/MAE for each horizon."""
    L_in = bb_cfg.L_in
    max_h = max(opts.horizons)
    if opts.protocol == "multivariate":
        variables = range(ds.n_vars)
    elif opts.protocol == "univariate":
        if opts.channel_mix:
            raise ConfigError("univariate protocol is channel independent")
        target = opts.target or ds.variable_names[-1]
        variables = [ds.variable_index(target)]
    else:
        raise ConfigError(f"protocol must be multivariate or univariate, got {opts.protocol!r}")

    if opts.origin_data:
        def featurize(win):
            return win.reshape(len(win), -1)
    else:
        if params is None:
            raise ConfigError("representation features need backbone parameters")

        def featurize(win):
            return encode_windows(win, params, bb_cfg, opts.batch_size)

    feats = {split: _SplitFeatures(ds, split, L_in, max_h, variables, featurize, opts.channel_mix)
             for split in ("train", "val", "test")}
    reports = []
    for h in opts.horizons:
        R_tr, Y_tr = feats["train"].pairs(h)
        R_te, Y_te = feats["test"].pairs(h)
        if opts.linear_head:
            model = fit_linear(R_tr, Y_tr)
        else:
            R_va, Y_va = feats["val"].pairs(h)
            alpha = select_alpha(R_tr, Y_tr, R_va, Y_va, opts.alphas)
            model = fit_ridge(R_tr, Y_tr, alpha)
        mse, mae = mse_mae(model.predict(R_te), Y_te)
        reports.append(ForecastReport(ds.name, h, "test", mse, mae, model.alpha, seed, fingerprint,
                                      opts.protocol, variant, len(R_te)))
    return reports


def mean_reports(reports: list[ForecastReport]) -> list[ForecastReport]:
    """One 'mean' row per (dataset, protocol, variant, horizon) across seeds."""
    groups: dict = {}
    for r in reports:
        groups.setdefault((r.dataset, r.protocol, r.variant, r.horizon), []).append(r)
    out = []
    for (dataset, protocol, variant, h), rs in groups.items():
        out.append(ForecastReport(dataset, h, rs[0].split, float(np.mean([r.mse for r in rs])),
                                  float(np.mean([r.mae for r in rs])),
                                  float(np.mean([r.alpha_selected for r in rs])), "mean",
                                  rs[0].fingerprint, protocol, variant, rs[0].n_windows))
    return out


def write_reports(reports: list[ForecastReport], out_dir, stem: str = "report") -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.csv"
    jsonl_path = out_dir / f"{stem}.jsonl"
    rows = [r.to_dict() for r in reports]
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    with open(jsonl_path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return csv_path, jsonl_path
