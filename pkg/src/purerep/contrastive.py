"""Momentum-contrast training: online/momentum encoders, negative queue, InfoNCE, SGD."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .augment import AugmentConfig, make_views
from .autodiff import Value
from .backbone import BackboneConfig, BackboneParams, encode, init_params, save_checkpoint
from .data import SeriesDataset, count_windows, sample_window_array
from .errors import ConfigError, DivergenceError, NormalizationError
from .seeding import child_rng

log = logging.getLogger(__name__)

NORM_TOL = 1e-3


@dataclass
class MocoConfig:
    batch_size: int = 256
    queue_size: int | None = None  # None -> 2 * batch_size
    momentum: float = 0.999
    tau: float = 0.07
    lr: float = 1e-3
    sgd_momentum: float = 0.9
    weight_decay: float = 0.0
    epochs: int = 100
    max_steps: int | None = None
    contrast_timesteps: str = "last"

    @property
    def K(self) -> int:
        return 2 * self.batch_size if self.queue_size is None else self.queue_size

    @property
    def warmup_batches(self) -> int:
        return math.ceil(self.K / self.batch_size)

    def validate(self) -> "MocoConfig":
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.K < self.batch_size:
            raise ConfigError(f"queue size {self.K} is smaller than batch size {self.batch_size}")
        if not 0.0 <= self.momentum <= 1.0:
            raise ConfigError(f"momentum must lie in [0, 1], got {self.momentum}")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.contrast_timesteps != "last":
            raise ConfigError("only contrast_timesteps=last is supported")
        return self


def _check_unit_rows(name: str, a: np.ndarray) -> None:
    if a.size == 0:
        return
    norms = np.linalg.norm(a, axis=1)
    if np.any(np.abs(norms - 1.0) > NORM_TOL):
        worst = float(np.max(np.abs(norms - 1.0)))
        raise NormalizationError(f"{name} rows must be unit length (max deviation {worst:.3g})")


def info_nce(q: Value, k_pos, queue, tau: float) -> Value:
    """Summed InfoNCE over the batch; only ``q`` carries gradient.

    q: [N, d] unit rows, k_pos: [N, d] unit rows, queue: [K, d] unit rows.
    """
    k_pos = np.asarray(k_pos.data if isinstance(k_pos, Value) else k_pos, dtype=np.float64)
    queue = np.asarray(queue, dtype=np.float64).reshape(-1, q.shape[1])
    if tau <= 0:
        raise ConfigError("tau must be positive")
    _check_unit_rows("q", q.data)
    _check_unit_rows("k_pos", k_pos)
    _check_unit_rows("queue", queue)
    n = q.shape[0]
    pos = ad.reshape(ad.sum_over(ad.mul(q, Value(k_pos)), axis=1), (n, 1))
    parts = [pos]
    if queue.shape[0]:
        parts.append(ad.matmul(q, Value(queue.T)))
    logits = ad.concat(parts, axis=1) / tau
    return ad.sum_over(ad.logsumexp(logits, axis=1) - ad.select(logits, 0, axis=1))


def momentum_update(online: BackboneParams, momentum: BackboneParams, m: float) -> BackboneParams:
    """theta_k <- m * theta_k + (1 - m) * theta_q, in place."""
    if not 0.0 <= m <= 1.0:
        raise ConfigError(f"momentum coefficient must lie in [0, 1], got {m}")
    for (_, q), (_, k) in zip(online.named(), momentum.named()):
        k.data = m * k.data + (1.0 - m) * q.data
    return momentum


@dataclass
class MocoState:
    online: BackboneParams
    momentum: BackboneParams
    queue: np.ndarray
    queue_head: int = 0
    m: float = 0.999
    tau: float = 0.07
    filled: int = 0

    @property
    def K(self) -> int:
        return self.queue.shape[0]


def enqueue(state: MocoState, k_batch) -> MocoState:
    """FIFO insert: overwrite the N oldest slots and advance the head mod K."""
    k_batch = np.asarray(k_batch, dtype=np.float64)
    n = k_batch.shape[0]
    if n > state.K:
        raise ConfigError(f"batch of {n} keys does not fit a queue of {state.K}")
    _check_unit_rows("k_batch", k_batch)
    slots = (state.queue_head + np.arange(n)) % state.K
    state.queue[slots] = k_batch
    state.queue_head = int((state.queue_head + n) % state.K)
    state.filled = min(state.K, state.filled + n)
    return state


class SGD:
    """Heavy-ball SGD: buf = mu * buf + g; theta -= lr * buf."""

    def __init__(self, params: list[Value], lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.bufs = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        for p, buf in zip(self.params, self.bufs):
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            buf *= self.momentum
            buf += g
            p.data = p.data - self.lr * buf


@dataclass
class TrainResult:
    state: MocoState
    trace: list = field(default_factory=list)
    steps: int = 0
    epochs_run: int = 0


def new_state(bb_cfg: BackboneConfig, moco_cfg: MocoConfig, seed: int) -> MocoState:
    online = init_params(bb_cfg, child_rng(seed, "backbone.init"))
    return MocoState(online=online, momentum=online.copy(requires_grad=False),
                     queue=np.zeros((moco_cfg.K, bb_cfg.d_rep)), m=moco_cfg.momentum, tau=moco_cfg.tau)


def contrastive_step(state: MocoState, batch: np.ndarray, aug_cfg: AugmentConfig,
                     bb_cfg: BackboneConfig, rng: np.random.Generator, optimizer: SGD | None) -> float | None:
    """One training step on a batch of raw windows.

    With ``optimizer=None`` the keys only fill the queue (warm-up) and None
    is returned; otherwise the summed InfoNCE loss before the update.
    """
    view_q, view_k = make_views(batch, aug_cfg, rng)
    with ad.no_grad():
        k = ad.l2_normalize(encode(view_k, state.momentum, bb_cfg), axis=1).data
    if optimizer is None:
        enqueue(state, k)
        return None
    state.online.zero_grad()
    q = ad.l2_normalize(encode(view_q, state.online, bb_cfg), axis=1)
    loss = info_nce(q, k, state.queue, state.tau)
    value = float(loss.data)
    if not math.isfinite(value):
        return value
    loss.backward()
    optimizer.step()
    momentum_update(state.online, state.momentum, state.m)
    enqueue(state, k)
    return value


def train(ds: SeriesDataset, aug_cfg: AugmentConfig, bb_cfg: BackboneConfig, moco_cfg: MocoConfig,
          seed: int, channel_mix: bool = False, callback=None) -> TrainResult:
    """Contrastive pre-training on the train split.

    Steps 1..warmup only fill the queue and are left out of the trace.
    ``callback(step, state)`` runs after every step if given.
    """
    moco_cfg.validate()
    bb_cfg.validate()
    aug_cfg.validate(bb_cfg.L_in)
    expected_inputs = ds.n_vars if channel_mix else 1
    if bb_cfg.n_inputs != expected_inputs:
        raise ConfigError(f"backbone expects {bb_cfg.n_inputs} input channels, data gives {expected_inputs}")
    state = new_state(bb_cfg, moco_cfg, seed)
    opt = SGD(state.online.values(), moco_cfg.lr, moco_cfg.sgd_momentum, moco_cfg.weight_decay)
    window_rng = child_rng(seed, "train.windows")
    aug_rng = child_rng(seed, "train.augment")
    N = moco_cfg.batch_size
    n_windows = count_windows(ds, "train", bb_cfg.L_in, channel_mix)
    steps_per_epoch = max(1, math.ceil(n_windows / N))
    result = TrainResult(state)
    step = 0
    for epoch in range(moco_cfg.epochs):
        for _ in range(steps_per_epoch):
            if moco_cfg.max_steps is not None and step >= moco_cfg.max_steps:
                return result
            step += 1
            batch, _, _ = sample_window_array(ds, "train", N, bb_cfg.L_in, window_rng, channel_mix)
            warm = step <= moco_cfg.warmup_batches
            loss = contrastive_step(state, batch, aug_cfg, bb_cfg, aug_rng, None if warm else opt)
            if not warm:
                if not math.isfinite(loss):
                    raise DivergenceError(f"non-finite loss at step {step}", step=step)
                result.trace.append({"step": step, "epoch": epoch, "loss": loss, "lr": moco_cfg.lr})
            result.steps = step
            if callback is not None:
                callback(step, state)
        result.epochs_run = epoch + 1
        if result.trace:
            log.info("epoch %d: last loss %.4f", epoch, result.trace[-1]["loss"])
    return result


def save_training_checkpoint(path, result: TrainResult, bb_cfg: BackboneConfig, seed: int,
                             meta: dict | None = None):
    s = result.state
    return save_checkpoint(path, bb_cfg, s.online, seed=seed, step=result.steps,
                           groups={"momentum": s.momentum.arrays(), "queue": s.queue},
                           meta={"queue_head": s.queue_head, "m": s.m, "tau": s.tau, **(meta or {})})

