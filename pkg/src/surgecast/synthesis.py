"""Deterministic synthetic OHLC generation with ground-truth surge injection.

Stands in for unavailable exchange data in tests and acceptance runs. The
close path is a seeded geometric Brownian walk; injected surges overwrite a
short span of closes with a three-peak staircase anchored at the preceding
close, so the swing detector is guaranteed an ascending chain of strict
local maxima whose total return clears the uptrend threshold exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .market_data import BarSeries


class SynthesisError(ValueError):
    pass


class SurgePlacementError(SynthesisError):
    pass


# peak heights as fractions of the surge magnitude; two pullback ramps between
_PEAKS = (0.30, 0.65, 1.00)
_PULLBACK_1 = (0.05, 0.15)
_PULLBACK_2 = (0.35, 0.45)

# a surge needs three strict maxima over a +/-2 centered window, so the
# peaks sit >= 3 bars apart: offsets 0, mid, duration-1 with duration >= 7
MIN_SURGE_DURATION = 7


@dataclass(frozen=True)
class SynthConfig:
    n_bars: int
    start_price: float = 100.0
    drift: float = 0.0          # per-bar log-price drift
    vol: float = 0.0            # per-bar log-price standard deviation
    surge_count: int = 0
    surge_magnitude: float = 0.012
    surge_duration: int = MIN_SURGE_DURATION
    seed: int = 0
    start_timestamp: int = 1_706_745_600  # 2024-02-01T00:00:00Z
    interval_seconds: int = 60
    wick_scale: float = 0.0005

    def __post_init__(self):
        if self.n_bars < 1:
            raise SynthesisError("n_bars must be >= 1")
        if self.start_price <= 0:
            raise SynthesisError("start_price must be positive")
        if self.vol < 0:
            raise SynthesisError("vol must be non-negative")
        if self.surge_count < 0:
            raise SynthesisError("surge_count must be non-negative")
        if self.interval_seconds < 1:
            raise SynthesisError("interval_seconds must be >= 1")
        if not (0 <= self.wick_scale < 0.5):
            raise SynthesisError("wick_scale must be in [0, 0.5)")
        if self.surge_count > 0:
            if self.surge_duration < MIN_SURGE_DURATION:
                raise SynthesisError(
                    f"surge_duration must be >= {MIN_SURGE_DURATION} to fit three strict maxima"
                )
            if self.surge_magnitude <= 0:
                raise SynthesisError("surge_magnitude must be positive")
            if surge_chain_return(self.surge_magnitude) <= 0.005:
                raise SynthesisError(
                    "surge_magnitude too small: the peak-to-peak chain return "
                    f"{surge_chain_return(self.surge_magnitude):.5f} would not clear the 0.005 threshold"
                )


def surge_chain_return(magnitude: float) -> float:
    """Exact first-peak to last-peak return of the injected staircase."""
    return (1.0 + _PEAKS[2] * magnitude) / (1.0 + _PEAKS[0] * magnitude) - 1.0


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, stream]))


def generate_gbm(cfg: SynthConfig) -> BarSeries:
    """Seeded geometric Brownian close path assembled into valid OHLC bars.

    close[0] is start_price; each open is the previous close; highs and lows
    inflate the body by a small seeded wick factor.
    """
    n = cfg.n_bars
    steps = cfg.drift + cfg.vol * _rng(cfg.seed, 0).standard_normal(n - 1) if n > 1 else np.array([])
    closes = cfg.start_price * np.exp(np.concatenate([[0.0], np.cumsum(steps)]))
    opens = np.concatenate([[cfg.start_price], closes[:-1]])
    wicks = _rng(cfg.seed, 1).random((n, 2))
    highs = np.maximum(opens, closes) * (1.0 + cfg.wick_scale * wicks[:, 0])
    lows = np.minimum(opens, closes) * (1.0 - cfg.wick_scale * wicks[:, 1])
    return BarSeries(
        timestamps=cfg.start_timestamp + cfg.interval_seconds * np.arange(n, dtype=np.int64),
        opens=opens,
        highs=highs,
        lows=lows,
        closes=closes,
        volumes=np.ones(n),
        interval_seconds=cfg.interval_seconds,
    )


def surge_profile(duration: int, magnitude: float) -> tuple[np.ndarray, tuple[int, int, int]]:
    """Multiplicative staircase over the surge span and its three peak offsets."""
    if duration < MIN_SURGE_DURATION:
        raise SynthesisError(f"surge duration must be >= {MIN_SURGE_DURATION}")
    last = duration - 1
    mid = min(max((duration - 1) // 2, 3), last - 3)
    levels = np.empty(duration)
    levels[0] = _PEAKS[0]
    levels[mid] = _PEAKS[1]
    levels[last] = _PEAKS[2]
    if mid > 1:
        levels[1:mid] = np.linspace(_PULLBACK_1[0], _PULLBACK_1[1], mid - 1)
    if last - mid > 1:
        levels[mid + 1:last] = np.linspace(_PULLBACK_2[0], _PULLBACK_2[1], last - mid - 1)
    return 1.0 + levels * magnitude, (0, mid, last)


def plan_surge_starts(cfg: SynthConfig) -> list[int]:
    """Deterministic non-overlapping surge start bars, one per equal slot."""
    if cfg.surge_count == 0:
        return []
    lead = 64                      # room for a full past window before the first surge
    tail = cfg.surge_duration + 8  # confirmation bars after the last surge
    lo, hi = lead, cfg.n_bars - cfg.surge_duration - tail
    span = hi - lo
    slot = span // cfg.surge_count if cfg.surge_count else 0
    jitter_room = slot - cfg.surge_duration - 5
    if span <= 0 or jitter_room < 1:
        raise SurgePlacementError(
            f"cannot place {cfg.surge_count} surges of {cfg.surge_duration} bars in {cfg.n_bars} bars"
        )
    rng = _rng(cfg.seed, 2)
    return [lo + i * slot + int(rng.integers(0, jitter_room)) for i in range(cfg.surge_count)]


def inject_surges(series: BarSeries, cfg: SynthConfig) -> tuple[BarSeries, list[int]]:
    """Overwrite closes along planned surge spans; returns the new series plus
    the bar indices where the labeling rule fires (the third peak of each surge).

    Each surge anchors at the close before its start, so the in-window swing
    structure and the chain return are deterministic regardless of path noise.
    Wick fractions of the affected bars are preserved when highs/lows rebuild.
    """
    if cfg.surge_count == 0:
        return series, []
    starts = plan_surge_starts(cfg)
    profile, (p0, p1, p2) = surge_profile(cfg.surge_duration, cfg.surge_magnitude)

    closes = series.closes.copy()
    opens = series.opens.copy()
    high_frac = series.highs / np.maximum(series.opens, series.closes)
    low_frac = series.lows / np.minimum(series.opens, series.closes)
    highs = series.highs.copy()
    lows = series.lows.copy()

    ground_truth: list[int] = []
    d = cfg.surge_duration
    for s in starts:
        anchor = closes[s - 1]
        closes[s:s + d] = anchor * profile
        opens[s + 1:s + d + 1] = closes[s:s + d]
        touched = slice(s, min(s + d + 1, len(closes)))
        highs[touched] = np.maximum(opens[touched], closes[touched]) * high_frac[touched]
        lows[touched] = np.minimum(opens[touched], closes[touched]) * low_frac[touched]
        ground_truth.append(s + p2)

    return (
        BarSeries(
            timestamps=series.timestamps.copy(),
            opens=opens,
            highs=highs,
            lows=lows,
            closes=closes,
            volumes=series.volumes.copy(),
            interval_seconds=series.interval_seconds,
        ),
        ground_truth,
    )


def generate_market(cfg: SynthConfig) -> tuple[BarSeries, list[int]]:
    """GBM path plus injected surges in one call."""
    series = generate_gbm(cfg)
    return inject_surges(series, cfg)
