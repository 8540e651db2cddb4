"""CSV ingest, train-statistics z-scoring, splits and window extraction."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ConstantVariableError, IngestError, WindowTooLongError

SPLITS = ("train", "val", "test")
DAYS_PER_MONTH = 30


@dataclass(frozen=True)
class SplitSpec:
    """How to cut a series into train/val/test.

    ``kind="months"``: train and val lengths in months of 30 days; the test
    range runs from the end of val to the end of the series.  ``kind="ratios"``:
    fractions of the timestep count, test again takes the remainder.
    """

    kind: str = "ratios"
    train: float = 0.6
    val: float = 0.2
    test: float = 0.2
    steps_per_month: int | None = None

    @classmethod
    def parse(cls, text: str) -> "SplitSpec":
        """Parse ``months:12,4,4`` or ``ratios:0.6,0.2,0.2``."""
        try:
            kind, _, rest = text.partition(":")
            a, b, c = (float(v) for v in rest.split(","))
        except ValueError:
            raise ConfigError(f"bad split spec {text!r}; expected e.g. months:12,4,4") from None
        kind = kind.strip()
        if kind not in ("months", "ratios"):
            raise ConfigError(f"split kind must be months or ratios, got {kind!r}")
        return cls(kind, a, b, c)

    def __str__(self):
        return f"{self.kind}:{self.train:g},{self.val:g},{self.test:g}"

    def boundaries(self, n: int, timestamps=None) -> dict[str, tuple[int, int]]:
        if self.kind == "months":
            spm = self.steps_per_month or _infer_steps_per_month(timestamps)
            n_train = int(round(self.train * spm))
            n_val = int(round(self.val * spm))
        else:
            if min(self.train, self.val, self.test) < 0:
                raise ConfigError("split ratios must be non-negative")
            n_train = int(n * self.train)
            n_val = int(n * self.val)
        if n_train < 1 or n_train + n_val > n:
            raise ConfigError(f"split {self} does not fit a series of length {n}")
        return {
            "train": (0, n_train),
            "val": (n_train, n_train + n_val),
            "test": (n_train + n_val, n),
        }


def _infer_steps_per_month(timestamps) -> int:
    if timestamps is None or len(timestamps) < 2:
        raise ConfigError("month-based split needs timestamps or steps_per_month")
    ts = pd.to_datetime(pd.Series(timestamps))
    step = ts.diff().dropna().median()
    if not step or step <= pd.Timedelta(0):
        raise ConfigError("cannot infer sampling step from timestamps")
    return int(round(pd.Timedelta(days=DAYS_PER_MONTH) / step))


@dataclass
class Window:
    series: np.ndarray
    variable_index: int
    start: int


@dataclass
class SeriesDataset:
    values: np.ndarray
    variable_names: list
    split: dict
    train_mean: np.ndarray
    train_std: np.ndarray
    name: str = "dataset"
    timestamps: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_array(cls, raw, variable_names=None, split_spec: SplitSpec | None = None,
                   name: str = "dataset", timestamps=None, normalize: bool = True) -> "SeriesDataset":
        raw = np.asarray(raw, dtype=np.float64)
        if raw.ndim == 1:
            raw = raw[:, None]
        n, c = raw.shape
        names = list(variable_names) if variable_names is not None else [f"x{i}" for i in range(c)]
        if len(names) != c:
            raise ConfigError(f"{len(names)} names for {c} variables")
        bad = np.argwhere(~np.isfinite(raw))
        if len(bad):
            row, col = bad[0]
            raise IngestError(f"non-finite value at row {row}, column {names[col]!r}",
                              row=int(row), column=names[col])
        split = (split_spec or SplitSpec()).boundaries(n, timestamps)
        lo, hi = split["train"]
        if normalize:
            mean = raw[lo:hi].mean(axis=0)
            std = raw[lo:hi].std(axis=0)
            constant = np.flatnonzero(~(std > 0))
            if constant.size:
                j = constant[0]
                raise ConstantVariableError(
                    f"variable {names[j]!r} is constant over the train range", column=names[j])
        else:
            mean, std = np.zeros(c), np.ones(c)
        values = (raw - mean) / std
        values.setflags(write=False)
        return cls(values, names, split, mean, std, name, timestamps)

    @property
    def n_vars(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.values.shape[0]

    def range(self, name: str) -> tuple[int, int]:
        try:
            return self.split[name]
        except KeyError:
            raise ConfigError(f"unknown split {name!r}; expected one of {SPLITS}") from None

    def denormalize(self, values) -> np.ndarray:
        return np.asarray(values) * self.train_std + self.train_mean

    def normalize(self, raw) -> np.ndarray:
        return (np.asarray(raw) - self.train_mean) / self.train_std

    def variable_index(self, name: str) -> int:
        try:
            return self.variable_names.index(name)
        except ValueError:
            raise ConfigError(f"no variable named {name!r} in {self.name}") from None


def ingest_csv(path, timestamp_column: str | None = None, split_spec: SplitSpec | None = None,
               name: str | None = None) -> SeriesDataset:
    """Read a CSV with a header row; the timestamp column is kept only for ordering."""
    path = Path(path)
    df = pd.read_csv(path)
    if df.shape[1] < 2:
        raise IngestError(f"{path}: need a timestamp column and at least one variable")
    ts_col = timestamp_column or df.columns[0]
    if ts_col not in df.columns:
        raise IngestError(f"{path}: no timestamp column {ts_col!r}", column=ts_col)
    timestamps = df[ts_col].to_numpy()
    body = df.drop(columns=[ts_col])
    numeric = body.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().to_numpy() | ~np.isfinite(numeric.to_numpy(dtype=np.float64))
    if bad.any():
        row, col = np.argwhere(bad)[0]
        column = body.columns[col]
        raise IngestError(f"{path}: missing or non-numeric value at data row {row}, column {column!r}",
                          row=int(row), column=column)
    return SeriesDataset.from_array(numeric.to_numpy(dtype=np.float64), list(body.columns), split_spec,
                                    name=name or path.stem, timestamps=timestamps)


def _range_or_raise(ds: SeriesDataset, range_name: str, need: int) -> tuple[int, int]:
    lo, hi = ds.range(range_name)
    if hi - lo < need:
        raise WindowTooLongError(f"{range_name} range has {hi - lo} steps, need {need}")
    return lo, hi


def sample_window_array(ds: SeriesDataset, range_name: str, count: int, L_in: int,
                        rng: np.random.Generator, channel_mix: bool = False):
    """Random crops as arrays: ([count, L_in] or [count, L_in, C], variables, starts)."""
    lo, hi = _range_or_raise(ds, range_name, L_in)
    if channel_mix:
        variables = np.full(count, -1)
    else:
        variables = rng.integers(0, ds.n_vars, size=count)
    starts = rng.integers(lo, hi - L_in + 1, size=count)
    idx = starts[:, None] + np.arange(L_in)[None, :]
    if channel_mix:
        return ds.values[idx], variables, starts
    return ds.values[idx, variables[:, None]], variables, starts


def sample_windows(ds: SeriesDataset, range_name: str, count: int, L_in: int,
                   rng: np.random.Generator, channel_mix: bool = False) -> list[Window]:
    X, variables, starts = sample_window_array(ds, range_name, count, L_in, rng, channel_mix)
    return [Window(x, int(v), int(s)) for x, v, s in zip(X, variables, starts)]


def count_windows(ds: SeriesDataset, range_name: str, L_in: int, channel_mix: bool = False) -> int:
    lo, hi = ds.range(range_name)
    per_var = max(hi - lo - L_in + 1, 0)
    return per_var if channel_mix else per_var * ds.n_vars


def eval_arrays(ds: SeriesDataset, range_name: str, L_in: int, horizon: int,
                variables=None, channel_mix: bool = False):
    """Stride-1 (window, next-``horizon``) pairs inside one split.

    Channel independent: X [M, L_in], Y [M, horizon], ordered variable-major.
    Channel mix: X [M, L_in, C], Y [M, horizon, C].
    Returns (X, Y, variable_of_row, start_of_row).
    """
    lo, hi = _range_or_raise(ds, range_name, L_in + horizon)
    n_pos = hi - lo - L_in - horizon + 1
    block = ds.values[lo:hi]
    if channel_mix:
        win = sliding_window_view(block, L_in + horizon, axis=0)[:n_pos]  # [M, C, L+T]
        win = win.transpose(0, 2, 1)
        starts = lo + np.arange(n_pos)
        return win[:, :L_in].copy(), win[:, L_in:].copy(), np.full(n_pos, -1), starts
    variables = range(ds.n_vars) if variables is None else list(variables)
    Xs, Ys, vs, ss = [], [], [], []
    for v in variables:
        win = sliding_window_view(block[:, v], L_in + horizon)[:n_pos]
        Xs.append(win[:, :L_in])
        Ys.append(win[:, L_in:])
        vs.append(np.full(n_pos, v))
        ss.append(lo + np.arange(n_pos))
    return np.concatenate(Xs), np.concatenate(Ys), np.concatenate(vs), np.concatenate(ss)


def enumerate_eval_windows(ds: SeriesDataset, range_name: str, L_in: int, horizon: int,
                           variables=None) -> list[tuple[Window, np.ndarray]]:
    X, Y, vs, ss = eval_arrays(ds, range_name, L_in, horizon, variables)
    return [(Window(x, int(v), int(s)), y) for x, y, v, s in zip(X, Y, vs, ss)]
