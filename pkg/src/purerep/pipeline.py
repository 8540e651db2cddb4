"""End-to-end runs behind the CLI commands: train, eval, ablate, synth, encode."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .backbone import encode_series, encode_windows, load_checkpoint
from .config import RunConfig
from .contrastive import save_training_checkpoint, train
from .data import SeriesDataset, SplitSpec, ingest_csv
from .errors import CheckpointMismatchError, ConfigError
from .forecast import ForecastReport, evaluate, mean_reports, write_reports
from .seeding import child_rng, run_seeds
from .synthetic import (SynthSpec, generate, probe_windows, separability_probe,
                        shuffled_baseline)

log = logging.getLogger(__name__)

SNAPSHOT_NAME = "config.snapshot"


def load_dataset(cfg: RunConfig) -> SeriesDataset:
    if not cfg.data.path:
        raise ConfigError("data.path is not set")
    return ingest_csv(cfg.data.path, cfg.data.timestamp_column, cfg.split_spec(), name=cfg.data.name)


def write_snapshot(cfg: RunConfig, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / SNAPSHOT_NAME
    path.write_text(f"# fingerprint={cfg.fingerprint()}\n" + cfg.snapshot())
    return path


def _write_loss_trace(path: Path, trace: list, fingerprint: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["step", "epoch", "loss", "lr", "fingerprint"])
        writer.writeheader()
        for row in trace:
            writer.writerow({**row, "fingerprint": fingerprint})


def train_seed(cfg: RunConfig, ds: SeriesDataset, seed: int, out_dir) -> Path:
    """Train one seed; writes <out>/seed-<seed>/{checkpoint.npz, loss.csv}."""
    bb = cfg.backbone_config(ds.n_vars)
    fp = cfg.fingerprint()
    result = train(ds, cfg.augment, bb, cfg.moco, seed, channel_mix=cfg.ablation.channel_mix)
    seed_dir = Path(out_dir) / f"seed-{seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    save_training_checkpoint(seed_dir / "checkpoint.npz", result, bb, seed,
                             meta={"fingerprint": fp, "variant": cfg.variant, "dataset": ds.name,
                                   "epochs_run": result.epochs_run})
    _write_loss_trace(seed_dir / "loss.csv", result.trace, fp)
    log.info("seed %d: %d steps, checkpoint in %s", seed, result.steps, seed_dir)
    return seed_dir


def run_train(cfg: RunConfig, out_dir=None) -> list[Path]:
    out_dir = Path(out_dir or cfg.run.out)
    ds = load_dataset(cfg)
    write_snapshot(cfg, out_dir)
    return [train_seed(cfg, ds, s, out_dir) for s in run_seeds(cfg.run.seed, cfg.run.seeds)]


def find_checkpoints(run_dir, seeds: list[int] | None = None) -> list[tuple[int, Path]]:
    run_dir = Path(run_dir)
    if run_dir.is_file():
        return [(None, run_dir)]
    found = []
    for d in sorted(run_dir.glob("seed-*")):
        ckpt = d / "checkpoint.npz"
        if not ckpt.exists():
            continue
        seed = int(d.name.split("-", 1)[1])
        if seeds is None or seed in seeds:
            found.append((seed, ckpt))
    if not found:
        raise ConfigError(f"no checkpoints under {run_dir}")
    return found


def evaluate_checkpoint(cfg: RunConfig, ds: SeriesDataset, checkpoint, seed=None) -> list[ForecastReport]:
    bb_ckpt, params, meta, _ = load_checkpoint(checkpoint)
    expected = cfg.backbone_config(ds.n_vars)
    if asdict(bb_ckpt) != asdict(expected):
        diff = {k: (v, asdict(expected)[k]) for k, v in asdict(bb_ckpt).items() if asdict(expected)[k] != v}
        raise CheckpointMismatchError(f"{checkpoint}: backbone differs from config {diff}")
    seed = meta.get("seed") if seed is None else seed
    return _evaluate(cfg, ds, params, bb_ckpt, seed)


def _evaluate(cfg, ds, params, bb, seed) -> list[ForecastReport]:
    reports = []
    for protocol in cfg.forecast.protocols:
        if protocol == "univariate" and cfg.ablation.channel_mix:
            continue
        reports += evaluate(params, bb, ds, cfg.eval_options(protocol), seed=seed,
                            fingerprint=cfg.fingerprint(), variant=cfg.variant)
    return reports


def run_eval(cfg: RunConfig, run_dir, out_dir=None, n_seeds: int | None = None,
             stem: str = "report") -> list[ForecastReport]:
    out_dir = Path(out_dir or cfg.run.out)
    ds = load_dataset(cfg)
    write_snapshot(cfg, out_dir)
    seeds = run_seeds(cfg.run.seed, n_seeds) if n_seeds else None
    reports = []
    for seed, ckpt in find_checkpoints(run_dir, seeds):
        reports += evaluate_checkpoint(cfg, ds, ckpt, seed)
    if len({r.seed for r in reports}) > 1:
        reports += mean_reports(reports)
    write_reports(reports, out_dir, stem)
    return reports


def run_ablation(cfg: RunConfig, variant: str, out_dir=None) -> list[ForecastReport]:
    cfg = cfg.with_ablation(variant)
    out_dir = Path(out_dir or cfg.run.out) / f"ablate-{variant}"
    ds = load_dataset(cfg)
    write_snapshot(cfg, out_dir)
    reports = []
    seeds = run_seeds(cfg.run.seed, cfg.run.seeds)
    for seed in seeds:
        if cfg.ablation.origin_data:
            # raw windows bypass the encoder, nothing to train
            reports += _evaluate(cfg, ds, None, cfg.backbone_config(ds.n_vars), seed)
            continue
        seed_dir = train_seed(cfg, ds, seed, out_dir)
        reports += evaluate_checkpoint(cfg, ds, seed_dir / "checkpoint.npz", seed)
    if len(seeds) > 1:
        reports += mean_reports(reports)
    write_reports(reports, out_dir, "report")
    return reports


# ---------------------------------------------------------------------------
# synthetic case study


def synth_spec(cfg: RunConfig) -> SynthSpec:
    s = cfg.synth
    return SynthSpec(length=s.length, noise_std=s.noise_std, period_mode=s.period_mode).validate()


def synthetic_dataset(cfg: RunConfig, seed: int) -> tuple[SeriesDataset, list]:
    data = generate(synth_spec(cfg), child_rng(seed, "synth.generate"))
    names = [f"trend{i}_period{j}" for i, j in data.labels()]
    ds = SeriesDataset.from_array(data.matrix(), names, SplitSpec("ratios", 1.0, 0.0, 0.0), name="synthetic")
    return ds, data.labels()


def case_study(cfg: RunConfig, seed: int) -> dict:
    """Train on the six synthetic series and probe the learned representations."""
    ds, labels = synthetic_dataset(cfg, seed)
    s = cfg.synth
    bb = cfg.backbone_config(1, lookback=s.lookback)
    moco = replace(cfg.moco, batch_size=s.batch_size, epochs=s.epochs, queue_size=None, max_steps=None)
    aug = replace(cfg.augment).validate(s.lookback)
    result = train(ds, aug, bb, moco, seed)
    X, owner = probe_windows(ds, s.lookback, s.probe_stride)
    reps = encode_windows(X, result.state.online, bb)
    trend_labels = np.array([labels[j][0] for j in owner])
    period_labels = np.array([labels[j][1] for j in owner])
    probe = separability_probe(reps, trend_labels, period_labels)
    raw = separability_probe(X, trend_labels, period_labels)
    base_t, base_p = shuffled_baseline(reps, trend_labels, period_labels, child_rng(seed, "synth.shuffle"))
    return {
        "dataset": ds, "labels": labels, "result": result, "reps": reps, "owner": owner,
        "trend_labels": trend_labels, "period_labels": period_labels,
        "trend_score": probe.trend_score, "period_score": probe.period_score, "pca": probe.pca,
        "raw_trend_score": raw.trend_score, "raw_period_score": raw.period_score,
        "shuffled_trend_score": base_t, "shuffled_period_score": base_p,
    }


def run_synth(cfg: RunConfig, out_dir=None) -> dict:
    out_dir = Path(out_dir or cfg.run.out)
    write_snapshot(cfg, out_dir)
    fp = cfg.fingerprint()
    study = case_study(cfg, cfg.run.seed)
    ds = study["dataset"]
    with open(out_dir / "synthetic.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", *ds.variable_names, "fingerprint"])
        raw = ds.denormalize(ds.values)
        for t, row in enumerate(raw):
            writer.writerow([t, *(f"{v:.17g}" for v in row), fp])
    with open(out_dir / "pca.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["series", "trend", "period", "pc1", "pc2", "fingerprint"])
        for j, t, p, (x, y) in zip(study["owner"], study["trend_labels"], study["period_labels"], study["pca"]):
            writer.writerow([ds.variable_names[j], int(t), int(p), f"{x:.17g}", f"{y:.17g}", fp])
    scores = {k: study[k] for k in ("trend_score", "period_score", "raw_trend_score", "raw_period_score",
                                    "shuffled_trend_score", "shuffled_period_score")}
    record = {"schema_version": 1, "seed": cfg.run.seed, "fingerprint": fp, "n_series": ds.n_vars,
              "length": len(ds), **scores}
    with open(out_dir / "probe.jsonl", "w") as fh:
        fh.write(json.dumps(record) + "\n")
    return record


# ---------------------------------------------------------------------------
# representation dump


def run_encode(cfg: RunConfig, checkpoint, split: str = "test", stride: int = 1, out_dir=None) -> Path:
    out_dir = Path(out_dir or cfg.run.out)
    ds = load_dataset(cfg)
    write_snapshot(cfg, out_dir)
    bb, params, meta, _ = load_checkpoint(checkpoint)
    if bb.L_in != cfg.data.lookback:
        raise CheckpointMismatchError(f"checkpoint L_in={bb.L_in} but config lookback={cfg.data.lookback}")
    lo, hi = ds.range(split)
    fp = cfg.fingerprint()
    path = out_dir / f"representations-{split}.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variable", "t", *(f"r{i}" for i in range(bb.d_rep)), "fingerprint"])
        if bb.n_inputs > 1:
            series = [("all", ds.values[lo:hi])]
        else:
            series = [(name, ds.values[lo:hi, j]) for j, name in enumerate(ds.variable_names)]
        for name, x in series:
            for t, r in encode_series(x, params, bb, stride):
                writer.writerow([name, lo + t, *(f"{v:.17g}" for v in r), fp])
    return path
