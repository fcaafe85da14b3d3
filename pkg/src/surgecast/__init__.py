"""Trend-prediction toolkit: OHLC features, swing labeling, and transformer classifiers.

The pipeline runs synth -> prepare -> train -> evaluate, either through the
`surgecast` CLI or the library modules:

- market_data: CSV parsing, resampling, SMA/EMA/RSI/Bollinger/volatility features
- labeling:    centered-window swing extrema, HH/LL/HL/LH chains, binary uptrend targets
- autodiff:    minimal reverse-mode engine every model runs on
- models:      simple transformer, conv transformer, prompt-guided causal stack
- training:    deterministic class-weighted Adam loop and binary checkpoints
- evaluation:  confusion metrics, per-class reports, threshold sweeps
- synthesis:   seeded GBM market generator with ground-truth surge injection
"""

from .evaluation import MetricsReport, classification_report
from .labeling import LabelingConfig, label_series, make_windows, split_chronological
from .market_data import (
    BarSeries,
    CsvSchema,
    FeatureFrame,
    IndicatorConfig,
    OhlcBar,
    build_feature_frame,
    parse_ohlc_csv,
    resample,
)
from .models import ModelConfig, init_model
from .synthesis import SynthConfig, generate_market
from .training import Checkpoint, TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "BarSeries",
    "Checkpoint",
    "CsvSchema",
    "FeatureFrame",
    "IndicatorConfig",
    "LabelingConfig",
    "MetricsReport",
    "ModelConfig",
    "OhlcBar",
    "SynthConfig",
    "TrainConfig",
    "build_feature_frame",
    "classification_report",
    "generate_market",
    "init_model",
    "label_series",
    "load_checkpoint",
    "make_windows",
    "parse_ohlc_csv",
    "resample",
    "save_checkpoint",
    "split_chronological",
    "train",
]
