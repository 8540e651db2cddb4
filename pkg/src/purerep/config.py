"""Run configuration: flat ``section.key=value`` text files with CLI overrides.

Example::

    # comments start with '#'
    data.path = data/ETTh1.csv
    data.split = months:12,4,4
    moco.tau = 0.07
    forecast.horizons = 24,48,168,336,720

Unknown keys are rejected.  The resolved snapshot (every key, sorted) is
what gets hashed into the fingerprint stamped on every output record.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .augment import AugmentConfig
from .backbone import BackboneConfig
from .contrastive import MocoConfig
from .data import SplitSpec
from .errors import ConfigError, UsageError
from .forecast import DEFAULT_ALPHAS, EvalOptions


@dataclass
class DataSection:
    path: str | None = None
    timestamp_column: str | None = None
    split: str = "ratios:0.6,0.2,0.2"
    name: str | None = None
    target: str | None = None
    lookback: int = 336


@dataclass
class BackboneSection:
    d_model: int = 64
    d_rep: int = 320
    kernel_sizes: tuple = (1, 2, 4, 8, 16, 32)
    trend_pool: str = "branches"


@dataclass
class ForecastSection:
    horizons: tuple = (24, 48, 168, 336, 720)
    alphas: tuple = DEFAULT_ALPHAS
    protocols: tuple = ("multivariate", "univariate")


@dataclass
class AblationSection:
    common_trans: bool = False
    channel_mix: bool = False
    drop_trend: bool = False
    drop_periodicity: bool = False
    origin_data: bool = False
    linear_head: bool = False


@dataclass
class SynthSection:
    length: int = 1000
    noise_std: float = 0.3
    period_mode: str = "period"
    lookback: int = 128
    epochs: int = 20
    batch_size: int = 256
    probe_stride: int = 100


@dataclass
class RunSection:
    seed: int = 0
    seeds: int = 1
    out: str = "runs/default"


SECTIONS = {
    "data": DataSection,
    "augment": AugmentConfig,
    "backbone": BackboneSection,
    "moco": MocoConfig,
    "forecast": ForecastSection,
    "ablation": AblationSection,
    "synth": SynthSection,
    "run": RunSection,
}

# ablation variant name -> flag it switches on
ABLATIONS = {
    "common_trans": "common_trans",
    "channel_mix": "channel_mix",
    "no_trend": "drop_trend",
    "no_periodicity": "drop_periodicity",
    "origin_data": "origin_data",
    "linear_head": "linear_head",
}


def _coerce(raw: str, annotation: str, key: str):
    text = raw.strip()
    if "None" in annotation and text.lower() in ("none", ""):
        return None
    try:
        if annotation.startswith("bool"):
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if annotation.startswith("int"):
            return int(text)
        if annotation.startswith("float"):
            return float(text)
        if annotation.startswith("tuple"):
            items = [t.strip() for t in text.split(",") if t.strip()]
            out = []
            for item in items:
                try:
                    out.append(int(item))
                except ValueError:
                    try:
                        out.append(float(item))
                    except ValueError:
                        out.append(item)
            return tuple(out)
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {annotation}") from None


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    return str(value)


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    backbone: BackboneSection = field(default_factory=BackboneSection)
    moco: MocoConfig = field(default_factory=MocoConfig)
    forecast: ForecastSection = field(default_factory=ForecastSection)
    ablation: AblationSection = field(default_factory=AblationSection)
    synth: SynthSection = field(default_factory=SynthSection)
    run: RunSection = field(default_factory=RunSection)
    source: str | None = None

    # ------------------------------------------------------------------ io
    def set(self, key: str, raw: str) -> None:
        section, _, name = key.strip().partition(".")
        if section not in SECTIONS or not name:
            raise ConfigError(f"unknown config key {key!r}")
        obj = getattr(self, section)
        hints = {f.name: str(f.type) for f in fields(obj)}
        if name not in hints:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(obj, name, _coerce(raw, hints[name], key))

    @classmethod
    def parse(cls, text: str, source: str | None = None) -> "RunConfig":
        cfg = cls(source=source)
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{source or '<config>'}:{lineno}: expected key=value")
            cfg.set(key, value)
        return cfg

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        if path is None:
            cfg = cls()
        else:
            path = Path(path)
            try:
                text = path.read_text()
            except OSError as exc:
                raise ConfigError(f"{path}: {exc.strerror or exc}") from None
            cfg = cls.parse(text, source=str(path))
            base = path.parent
            if cfg.data.path and not Path(cfg.data.path).is_absolute() and not Path(cfg.data.path).exists():
                # relative paths that miss from the cwd resolve against the config file
                cfg.data.path = str(base / cfg.data.path)
        for key, value in (overrides or {}).items():
            cfg.set(key, value)
        return cfg.validate()

    def items(self) -> list[tuple[str, str]]:
        out = []
        for section in SECTIONS:
            obj = getattr(self, section)
            for f in fields(obj):
                out.append((f"{section}.{f.name}", _format(getattr(obj, f.name))))
        return sorted(out)

    def snapshot(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.items())

    def fingerprint(self) -> str:
        return hashlib.sha256(self.snapshot().encode()).hexdigest()[:16]

    # ------------------------------------------------------------ resolve
    def validate(self) -> "RunConfig":
        if self.data.path is not None and not Path(self.data.path).exists():
            raise ConfigError(f"data file {self.data.path} does not exist")
        SplitSpec.parse(self.data.split)
        self.augment.validate(self.data.lookback)
        self.moco.validate()
        if self.run.seeds < 1:
            raise ConfigError("run.seeds must be >= 1")
        if not self.forecast.horizons:
            raise ConfigError("forecast.horizons is empty")
        bad = [p for p in self.forecast.protocols if p not in ("multivariate", "univariate")]
        if bad:
            raise ConfigError(f"unknown forecast protocols {bad}")
        if self.ablation.drop_trend and self.ablation.drop_periodicity:
            raise ConfigError("cannot drop both encoder branches")
        if self.ablation.common_trans:
            self.augment.mode = "common_trans"
        return self

    def with_ablation(self, variant: str) -> "RunConfig":
        if variant not in ABLATIONS:
            raise UsageError(f"unknown ablation {variant!r}; choose from {', '.join(ABLATIONS)}")
        ablation = replace(self.ablation, **{ABLATIONS[variant]: True})
        cfg = replace(self, ablation=ablation, augment=replace(self.augment))
        return cfg.validate()

    @property
    def variant(self) -> str:
        on = [name for name, flag in ABLATIONS.items() if getattr(self.ablation, flag)]
        return "+".join(on) if on else "default"

    def split_spec(self) -> SplitSpec:
        return SplitSpec.parse(self.data.split)

    def backbone_config(self, n_vars: int = 1, lookback: int | None = None) -> BackboneConfig:
        b = self.backbone
        return BackboneConfig(
            L_in=lookback or self.data.lookback,
            n_inputs=n_vars if self.ablation.channel_mix else 1,
            d_model=b.d_model, d_rep=b.d_rep, kernel_sizes=tuple(b.kernel_sizes),
            use_trend=not self.ablation.drop_trend,
            use_periodic=not self.ablation.drop_periodicity,
            trend_pool=b.trend_pool,
        ).validate()

    def eval_options(self, protocol: str) -> EvalOptions:
        return EvalOptions(
            horizons=tuple(int(h) for h in self.forecast.horizons),
            protocol=protocol,
            target=self.data.target,
            alphas=tuple(float(a) for a in self.forecast.alphas),
            origin_data=self.ablation.origin_data,
            linear_head=self.ablation.linear_head,
            channel_mix=self.ablation.channel_mix,
        )

