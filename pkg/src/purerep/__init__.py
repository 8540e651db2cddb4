"""Contrastive time-series representation learning with decomposition-aware views."""

from .augment import AugmentConfig, make_views, periodic_sample, trend_sample
from .backbone import BackboneConfig, encode, encode_windows, init_params, load_checkpoint
from .config import RunConfig
from .contrastive import MocoConfig, info_nce, train
from .data import SeriesDataset, SplitSpec, ingest_csv
from .forecast import evaluate, fit_ridge
from .synthetic import SynthSpec, generate, separability_probe

__version__ = "0.1.0"
