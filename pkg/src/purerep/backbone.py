"""Dual-branch encoder: shared projection, causal multi-kernel trend branch,
Fourier-domain periodic branch, concatenated into one global representation.

Checkpoint layout (``.npz``, written by :func:`save_checkpoint`):

``meta``            0-d unicode array holding a JSON object with keys
                    ``format`` (= "purerep-checkpoint"), ``version``,
                    ``backbone`` (BackboneConfig fields), ``seed``, ``step``
                    and any caller-supplied extras.
``online/<name>``   float64 parameter arrays, names from
                    :meth:`BackboneParams.named`; complex tensors keep
                    their trailing (re, im) axis.
``<group>/<name>``  extra array groups (``momentum/...``, ``queue``...).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import autodiff as ad
from .autodiff import Value
from .errors import CheckpointMismatchError, ConfigError, NonFiniteError, ShapeError, WindowTooLongError

CHECKPOINT_FORMAT = "purerep-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class BackboneConfig:
    L_in: int = 336
    n_inputs: int = 1
    d_model: int = 64
    d_rep: int = 320
    kernel_sizes: tuple = (1, 2, 4, 8, 16, 32)
    use_trend: bool = True
    use_periodic: bool = True
    trend_pool: str = "branches"

    def __post_init__(self):
        self.kernel_sizes = tuple(int(k) for k in self.kernel_sizes)

    @property
    def d_trend(self) -> int:
        if not self.use_trend:
            return 0
        return self.d_rep // 2 if self.use_periodic else self.d_rep

    @property
    def d_periodic(self) -> int:
        if not self.use_periodic:
            return 0
        return self.d_rep - self.d_trend

    @property
    def n_freqs(self) -> int:
        return self.L_in // 2 + 1

    def validate(self) -> "BackboneConfig":
        if not (self.use_trend or self.use_periodic):
            raise ConfigError("at least one encoder branch must be enabled")
        if self.use_trend and self.use_periodic and self.d_rep % 2:
            raise ConfigError(f"d_rep must be even to split between branches, got {self.d_rep}")
        if self.use_trend:
            if not self.kernel_sizes:
                raise ConfigError("trend branch needs at least one kernel size")
            bad = [k for k in self.kernel_sizes if not 1 <= k <= self.L_in]
            if bad:
                raise ConfigError(f"kernel sizes {bad} must lie in [1, L_in={self.L_in}]")
        if self.trend_pool not in ("branches", "time"):
            raise ConfigError(f"trend_pool must be 'branches' or 'time', got {self.trend_pool!r}")
        if min(self.L_in, self.n_inputs, self.d_model, self.d_rep) < 1:
            raise ConfigError("L_in, n_inputs, d_model and d_rep must be positive")
        return self


def ablate(cfg: BackboneConfig, drop: str) -> BackboneConfig:
    """Drop one encoder branch; the survivor takes the full representation width."""
    if drop == "trend":
        out = replace(cfg, use_trend=False)
    elif drop == "periodicity":
        out = replace(cfg, use_periodic=False)
    else:
        raise ConfigError(f"drop must be 'trend' or 'periodicity', got {drop!r}")
    return out.validate()


@dataclass
class BackboneParams:
    proj_W: Value
    proj_b: Value
    trend_kernels: dict = field(default_factory=dict)  # kernel size -> Value [k, d_model, d_trend]
    periodic_W: Value | None = None

    def named(self) -> list[tuple[str, Value]]:
        out = [("proj_W", self.proj_W), ("proj_b", self.proj_b)]
        out += [(f"trend_k{k}", v) for k, v in sorted(self.trend_kernels.items())]
        if self.periodic_W is not None:
            out.append(("periodic_W", self.periodic_W))
        return out

    def values(self) -> list[Value]:
        return [v for _, v in self.named()]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: v.data for name, v in self.named()}

    @classmethod
    def from_arrays(cls, arrays: dict, requires_grad: bool = True) -> "BackboneParams":
        def val(name, is_complex=False):
            return Value(np.array(arrays[name], dtype=np.float64), is_complex=is_complex,
                         requires_grad=requires_grad)

        kernels = {int(name[len("trend_k"):]): val(name) for name in arrays if name.startswith("trend_k")}
        periodic = val("periodic_W", True) if "periodic_W" in arrays else None
        return cls(val("proj_W"), val("proj_b"), kernels, periodic)

    def copy(self, requires_grad: bool = True) -> "BackboneParams":
        return BackboneParams.from_arrays({k: v.copy() for k, v in self.arrays().items()}, requires_grad)

    def zero_grad(self) -> None:
        for v in self.values():
            v.zero_grad()

    def all_finite(self) -> bool:
        return all(np.isfinite(v.data).all() for v in self.values())


def init_params(cfg: BackboneConfig, rng: np.random.Generator) -> BackboneParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every tensor."""
    cfg.validate()

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return Value(rng.uniform(-bound, bound, size=shape), requires_grad=True)

    proj_W = uniform((cfg.n_inputs, cfg.d_model), cfg.n_inputs)
    proj_b = uniform((cfg.d_model,), cfg.n_inputs)
    kernels = {}
    if cfg.use_trend:
        for k in cfg.kernel_sizes:
            kernels[k] = uniform((k, cfg.d_model, cfg.d_trend), k * cfg.d_model)
    periodic = None
    if cfg.use_periodic:
        shape = (cfg.n_freqs, cfg.d_model, cfg.d_periodic, 2)
        bound = 1.0 / np.sqrt(cfg.d_model)
        periodic = Value(rng.uniform(-bound, bound, size=shape), is_complex=True, requires_grad=True)
    return BackboneParams(proj_W, proj_b, kernels, periodic)


def check_params(params: BackboneParams, cfg: BackboneConfig) -> None:
    expected = init_params(cfg, np.random.default_rng(0)).arrays()
    got = params.arrays()
    if expected.keys() != got.keys():
        raise CheckpointMismatchError(f"parameter names {sorted(got)} != {sorted(expected)}")
    for name, arr in expected.items():
        if got[name].shape != arr.shape:
            raise CheckpointMismatchError(f"{name}: shape {got[name].shape} != {arr.shape}")


def _as_input(x, cfg: BackboneConfig) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3 or x.shape[1] != cfg.L_in or x.shape[2] != cfg.n_inputs:
        raise ShapeError(f"view shape {x.shape} does not match [B, {cfg.L_in}, {cfg.n_inputs}]")
    if not np.isfinite(x).all():
        raise NonFiniteError("non-finite values in encoder input")
    return x


def _trend_branch(x: np.ndarray, params: BackboneParams, cfg: BackboneConfig) -> Value:
    kernels = [params.trend_kernels[k] for k in cfg.kernel_sizes]
    if cfg.trend_pool == "branches":
        # only the last timestep is kept, and it sees at most max(k) inputs
        tail = x[:, cfg.L_in - max(cfg.kernel_sizes):, :]
        h = ad.linear(tail, params.proj_W, params.proj_b)
        outs = [ad.conv1d_causal(h, K, last_only=True) for K in kernels]
    else:
        h = ad.linear(x, params.proj_W, params.proj_b)
        outs = [ad.conv1d_causal(h, K) for K in kernels]
    total = outs[0]
    for o in outs[1:]:
        total = total + o
    total = total / len(outs)
    if cfg.trend_pool == "time":
        total = ad.mean_over(total, axis=1)
    return total


def _periodic_branch_reference(x: np.ndarray, params: BackboneParams, cfg: BackboneConfig) -> Value:
    """project -> rfft -> per-bin complex linear -> irfft -> last timestep, op by op."""
    h = ad.linear(x, params.proj_W, params.proj_b)
    z = ad.complex_linear(ad.rfft(h), params.periodic_W)
    return ad.select(ad.irfft(z, cfg.L_in), -1, axis=1)


def _periodic_branch(x: np.ndarray, params: BackboneParams, cfg: BackboneConfig) -> Value:
    """Same map as the reference, reassociated.

    The projection is affine per timestep, so appending a constant-one input
    channel turns it into a matrix A = [W; b], and rfft(x_aug @ A) =
    rfft(x_aug) @ A.  A is folded into the spectral weights first (tiny),
    leaving a per-bin product over n_inputs+1 channels instead of d_model.
    """
    x_aug = np.concatenate([x, np.ones(x.shape[:2] + (1,))], axis=2)
    spectrum = ad.rfft(x_aug)
    A = ad.concat([params.proj_W, ad.reshape(params.proj_b, (1, cfg.d_model))], axis=0)
    weights = ad.real_complex_matmul(A, params.periodic_W)
    return ad.irfft_at(ad.complex_linear(spectrum, weights), cfg.L_in, -1)


def encode(view, params: BackboneParams, cfg: BackboneConfig) -> Value:
    """(periodic [B, L_in(, C)], trend [B, L_in(, C)]) -> Value [B, d_rep]."""
    periodic, trend = view
    parts = []
    if cfg.use_trend:
        parts.append(_trend_branch(_as_input(trend, cfg), params, cfg))
    if cfg.use_periodic:
        parts.append(_periodic_branch(_as_input(periodic, cfg), params, cfg))
    out = parts[0] if len(parts) == 1 else ad.concat(parts, axis=1)
    if not np.isfinite(out.data).all():
        raise NonFiniteError("encoder produced non-finite activations")
    return out


def encode_array(view, params: BackboneParams, cfg: BackboneConfig, batch_size: int = 1024) -> np.ndarray:
    """Gradient-free :func:`encode` in chunks; returns a plain array."""
    periodic, trend = (np.asarray(a, dtype=np.float64) for a in view)
    n = periodic.shape[0]
    out = np.empty((n, cfg.d_rep))
    with ad.no_grad():
        for i in range(0, n, batch_size):
            out[i:i + batch_size] = encode((periodic[i:i + batch_size], trend[i:i + batch_size]),
                                           params, cfg).data
    return out


def encode_windows(X, params: BackboneParams, cfg: BackboneConfig, batch_size: int = 1024) -> np.ndarray:
    """Encode raw windows, feeding the same window to both branches."""
    return encode_array((X, X), params, cfg, batch_size)


def encode_series(x, params: BackboneParams, cfg: BackboneConfig, stride: int = 1):
    """Slide a causal window over ``x``; returns [(t, r_t)] with t the window's last index."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < cfg.L_in:
        raise WindowTooLongError(f"series of length {x.shape[0]} is shorter than L_in={cfg.L_in}")
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    windows = sliding_window_view(x, cfg.L_in, axis=0)[::stride].transpose(0, 2, 1)
    reps = encode_windows(windows, params, cfg)
    ends = np.arange(cfg.L_in - 1, x.shape[0], stride)
    return list(zip(ends.tolist(), reps))


# ---------------------------------------------------------------------------
# checkpoints


def config_from_dict(d: dict) -> BackboneConfig:
    return BackboneConfig(**{**d, "kernel_sizes": tuple(d["kernel_sizes"])})


def save_checkpoint(path, cfg: BackboneConfig, params: BackboneParams, *, seed: int, step: int,
                    groups: dict | None = None, meta: dict | None = None) -> Path:
    path = Path(path)
    header = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
              "backbone": {**asdict(cfg), "kernel_sizes": list(cfg.kernel_sizes)},
              "seed": int(seed), "step": int(step), **(meta or {})}
    arrays = {f"online/{k}": v for k, v in params.arrays().items()}
    for group, content in (groups or {}).items():
        if isinstance(content, dict):
            arrays.update({f"{group}/{k}": v for k, v in content.items()})
        else:
            arrays[group] = content
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(header, sort_keys=True)), **arrays)
    return path


def load_checkpoint(path):
    """Returns (BackboneConfig, online params, meta dict, {group: {name: array}})."""
    with np.load(Path(path), allow_pickle=False) as f:
        meta = json.loads(str(f["meta"]))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointMismatchError(f"{path} is not a {CHECKPOINT_FORMAT} file")
        groups: dict = {}
        for key in f.files:
            if key == "meta":
                continue
            group, _, name = key.partition("/")
            if name:
                groups.setdefault(group, {})[name] = f[key]
            else:
                groups[group] = f[key]
    cfg = config_from_dict(meta["backbone"])
    params = BackboneParams.from_arrays(groups.pop("online"))
    check_params(params, cfg)
    return cfg, params, meta, groups
