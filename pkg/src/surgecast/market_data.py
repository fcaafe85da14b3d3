"""OHLC parsing, resampling, and engineered indicator features.

All operations are pure: series and frames are built once, validated, and
never mutated. Close is the price series every indicator runs on.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterator, Sequence

import numpy as np


class MarketDataError(ValueError):
    pass


class MissingColumnError(MarketDataError):
    pass


class MalformedNumberError(MarketDataError):
    pass


class NonMonotonicTimestampError(MarketDataError):
    pass


class InvalidBarError(MarketDataError):
    pass


@dataclass(frozen=True)
class OhlcBar:
    timestamp: int
    open: float
    high: float
    low: float
    close: float
    volume: float = 0.0

    def validate(self) -> None:
        if min(self.open, self.high, self.low, self.close) <= 0:
            raise InvalidBarError(f"prices must be strictly positive, got {self}")
        if self.low > min(self.open, self.close) or self.high < max(self.open, self.close):
            raise InvalidBarError(
                f"low must bound min(open, close) and high bound max(open, close), got {self}"
            )
        if self.volume < 0:
            raise InvalidBarError(f"volume must be non-negative, got {self.volume}")


@dataclass(frozen=True)
class BarSeries:
    """Time-ordered OHLC(+volume) bars at a fixed nominal interval.

    Timestamps must be strictly increasing; spacings other than
    interval_seconds are permitted and recorded as gaps, never filled.
    """

    timestamps: np.ndarray
    opens: np.ndarray
    highs: np.ndarray
    lows: np.ndarray
    closes: np.ndarray
    volumes: np.ndarray
    interval_seconds: int

    def __post_init__(self):
        n = len(self.timestamps)
        for name in ("opens", "highs", "lows", "closes", "volumes"):
            if len(getattr(self, name)) != n:
                raise MarketDataError(f"column {name} length differs from timestamps")
        if self.interval_seconds <= 0:
            raise MarketDataError("interval_seconds must be positive")
        if n == 0:
            raise MarketDataError("series must contain at least one bar")
        if n > 1 and not (np.diff(self.timestamps) > 0).all():
            bad = int(np.argmin(np.diff(self.timestamps) > 0)) + 1
            raise NonMonotonicTimestampError(f"timestamps not strictly increasing at bar {bad}")
        if (self.lows <= 0).any():
            raise InvalidBarError("prices must be strictly positive")
        if (self.lows > np.minimum(self.opens, self.closes)).any() or (
            self.highs < np.maximum(self.opens, self.closes)
        ).any():
            raise InvalidBarError("OHLC bounds violated")
        if (self.volumes < 0).any():
            raise InvalidBarError("volume must be non-negative")

    @classmethod
    def from_bars(cls, bars: Sequence[OhlcBar], interval_seconds: int) -> "BarSeries":
        for b in bars:
            b.validate()
        return cls(
            timestamps=np.array([b.timestamp for b in bars], dtype=np.int64),
            opens=np.array([b.open for b in bars], dtype=np.float64),
            highs=np.array([b.high for b in bars], dtype=np.float64),
            lows=np.array([b.low for b in bars], dtype=np.float64),
            closes=np.array([b.close for b in bars], dtype=np.float64),
            volumes=np.array([b.volume for b in bars], dtype=np.float64),
            interval_seconds=interval_seconds,
        )

    def __len__(self) -> int:
        return len(self.timestamps)

    def __iter__(self) -> Iterator[OhlcBar]:
        for i in range(len(self)):
            yield OhlcBar(
                int(self.timestamps[i]),
                float(self.opens[i]),
                float(self.highs[i]),
                float(self.lows[i]),
                float(self.closes[i]),
                float(self.volumes[i]),
            )

    @property
    def gap_indices(self) -> np.ndarray:
        """Indices of bars whose spacing from the previous bar is not the nominal interval."""
        if len(self) < 2:
            return np.array([], dtype=np.int64)
        return np.where(np.diff(self.timestamps) != self.interval_seconds)[0] + 1


@dataclass(frozen=True)
class CsvSchema:
    timestamp: str = "timestamp"
    open: str = "open"
    high: str = "high"
    low: str = "low"
    close: str = "close"
    volume: str = "volume"
    interval_seconds: int | None = None


def _read_text(source) -> str:
    if isinstance(source, (str, Path)):
        return Path(source).read_bytes().decode("utf-8")
    if isinstance(source, bytes):
        return source.decode("utf-8")
    data = source.read()
    if isinstance(data, bytes):
        return data.decode("utf-8")
    return data


def parse_ohlc_csv(source, schema: CsvSchema = CsvSchema()) -> BarSeries:
    """Parse an OHLC CSV (header row required) into a validated BarSeries.

    Rows that break any bar invariant are rejected with their line number;
    line 1 is the header.
    """
    text = _read_text(source)
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise MarketDataError("empty input: no header row") from None
    index: dict[str, int] = {name.strip(): i for i, name in enumerate(header)}

    required = {"timestamp": schema.timestamp, "open": schema.open, "high": schema.high,
                "low": schema.low, "close": schema.close}
    for role, col in required.items():
        if col not in index:
            raise MissingColumnError(f"required column '{col}' ({role}) not found in header")
    vol_idx = index.get(schema.volume)

    bars: list[OhlcBar] = []
    prev_ts: int | None = None
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue

        def cell(col: str) -> str:
            i = index[col]
            if i >= len(row):
                raise MalformedNumberError(f"line {lineno}: missing field '{col}'")
            return row[i].strip()

        try:
            ts = int(cell(schema.timestamp))
        except ValueError:
            raise MalformedNumberError(
                f"line {lineno}: malformed timestamp {cell(schema.timestamp)!r}"
            ) from None
        prices = {}
        for col in (schema.open, schema.high, schema.low, schema.close):
            raw = cell(col)
            try:
                prices[col] = float(raw)
            except ValueError:
                raise MalformedNumberError(f"line {lineno}: malformed number {raw!r} in '{col}'") from None
        if vol_idx is not None and vol_idx < len(row) and row[vol_idx].strip():
            try:
                volume = float(row[vol_idx])
            except ValueError:
                raise MalformedNumberError(f"line {lineno}: malformed volume {row[vol_idx]!r}") from None
        else:
            volume = 0.0

        if prev_ts is not None and ts <= prev_ts:
            raise NonMonotonicTimestampError(
                f"line {lineno}: timestamp {ts} not greater than previous {prev_ts}"
            )
        prev_ts = ts

        bar = OhlcBar(ts, prices[schema.open], prices[schema.high], prices[schema.low],
                      prices[schema.close], volume)
        try:
            bar.validate()
        except InvalidBarError as exc:
            raise InvalidBarError(f"line {lineno}: {exc}") from None
        bars.append(bar)

    if not bars:
        raise MarketDataError("no data rows")
    interval = schema.interval_seconds
    if interval is None:
        if len(bars) < 2:
            raise MarketDataError("cannot infer interval from a single row; set CsvSchema.interval_seconds")
        interval = bars[1].timestamp - bars[0].timestamp
    return BarSeries.from_bars(bars, interval)


def write_ohlc_csv(series: BarSeries, sink) -> None:
    """Write a BarSeries as CSV; floats use repr so a re-parse is bit-identical."""
    own = isinstance(sink, (str, Path))
    f: IO[str] = open(sink, "w", newline="") if own else sink
    try:
        f.write("timestamp,open,high,low,close,volume\n")
        for i in range(len(series)):
            f.write(
                f"{series.timestamps[i]},{float(series.opens[i])!r},{float(series.highs[i])!r},"
                f"{float(series.lows[i])!r},{float(series.closes[i])!r},{float(series.volumes[i])!r}\n"
            )
    finally:
        if own:
            f.close()


def resample(series: BarSeries, factor: int) -> BarSeries:
    """Aggregate every `factor` consecutive bars; a trailing partial group is dropped."""
    if factor <= 0:
        raise MarketDataError(f"resample factor must be >= 1, got {factor}")
    if factor == 1:
        return series
    n_out = len(series) // factor
    if n_out == 0:
        raise MarketDataError(f"series of {len(series)} bars too short for factor {factor}")
    cut = n_out * factor

    def grouped(a: np.ndarray) -> np.ndarray:
        return a[:cut].reshape(n_out, factor)

    return BarSeries(
        timestamps=series.timestamps[:cut:factor].copy(),
        opens=series.opens[:cut:factor].copy(),
        highs=grouped(series.highs).max(axis=1),
        lows=grouped(series.lows).min(axis=1),
        closes=series.closes[factor - 1:cut:factor].copy(),
        volumes=grouped(series.volumes).sum(axis=1),
        interval_seconds=series.interval_seconds * factor,
    )


# ---------------------------------------------------------------------------
# indicators


def sma(prices: Sequence[float], window: int) -> np.ndarray:
    """Trailing simple moving average; warm-up positions are NaN."""
    p = np.asarray(prices, dtype=np.float64)
    if p.size == 0:
        raise MarketDataError("sma: empty input")
    if window < 1:
        raise MarketDataError("sma: window must be >= 1")
    out = np.full(p.shape, np.nan)
    if p.size >= window:
        win = np.lib.stride_tricks.sliding_window_view(p, window)
        out[window - 1:] = win.mean(axis=1)
    return out


def ema(prices: Sequence[float], span: int) -> np.ndarray:
    """Exponential moving average with alpha = 2/(span+1), seeded at prices[0]."""
    p = np.asarray(prices, dtype=np.float64)
    if p.size == 0:
        raise MarketDataError("ema: empty input")
    if span < 1:
        raise MarketDataError("ema: span must be >= 1")
    alpha = 2.0 / (span + 1)
    out = np.empty_like(p)
    out[0] = p[0]
    for i in range(1, p.size):
        out[i] = alpha * p[i] + (1 - alpha) * out[i - 1]
    return out


def rsi(prices: Sequence[float], period: int) -> np.ndarray:
    """Relative Strength Index with Wilder smoothing; 0/0 is defined as 50."""
    p = np.asarray(prices, dtype=np.float64)
    if period < 1:
        raise MarketDataError("rsi: period must be >= 1")
    if p.size <= period:
        raise MarketDataError(f"rsi: need more than {period} prices, got {p.size}")
    delta = np.diff(p)
    gains = np.maximum(delta, 0.0)
    losses = np.maximum(-delta, 0.0)
    out = np.full(p.shape, np.nan)
    avg_gain = gains[:period].mean()
    avg_loss = losses[:period].mean()

    def to_rsi(ag: float, al: float) -> float:
        if al == 0.0 and ag == 0.0:
            return 50.0
        if al == 0.0:
            return 100.0
        return 100.0 - 100.0 / (1.0 + ag / al)

    out[period] = to_rsi(avg_gain, avg_loss)
    for i in range(period + 1, p.size):
        avg_gain = (avg_gain * (period - 1) + gains[i - 1]) / period
        avg_loss = (avg_loss * (period - 1) + losses[i - 1]) / period
        out[i] = to_rsi(avg_gain, avg_loss)
    return out


def bollinger(prices: Sequence[float], window: int, k: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bollinger bands: SMA middle, +/- k population standard deviations."""
    p = np.asarray(prices, dtype=np.float64)
    if p.size == 0:
        raise MarketDataError("bollinger: empty input")
    if window < 2:
        raise MarketDataError("bollinger: window must be >= 2")
    mid = sma(p, window)
    offset = np.full(p.shape, np.nan)
    if p.size >= window:
        win = np.lib.stride_tricks.sliding_window_view(p, window)
        offset[window - 1:] = k * win.std(axis=1)
    return mid, mid + offset, mid - offset


def log_return_volatility(prices: Sequence[float]) -> float:
    """Sample standard deviation (n-1 denominator) of log price changes.

    Two-pass with compensated summation so the result is exact to near
    machine precision, not just to pairwise-summation accuracy.
    """
    p = np.asarray(prices, dtype=np.float64)
    if (p <= 0).any():
        raise MarketDataError("volatility: prices must be strictly positive")
    if p.size < 3:
        raise MarketDataError("volatility: need at least 3 prices (2 returns)")
    r = np.log(p[1:] / p[:-1])
    mu = math.fsum(r) / r.size
    return math.sqrt(math.fsum((x - mu) ** 2 for x in r) / (r.size - 1))


def rolling_volatility(prices: Sequence[float], window: int) -> np.ndarray:
    """Per-bar log-return volatility over a trailing window of `window` prices."""
    p = np.asarray(prices, dtype=np.float64)
    if window < 3:
        raise MarketDataError("rolling_volatility: window must be >= 3")
    out = np.full(p.shape, np.nan)
    if p.size >= window:
        r = np.log(p[1:] / p[:-1])
        win = np.lib.stride_tricks.sliding_window_view(r, window - 1)
        out[window - 1:] = win.std(axis=1, ddof=1)
    return out


# ---------------------------------------------------------------------------
# feature frame


FEATURE_COLUMNS = ("close", "sma", "ema", "rsi", "bb_mid", "bb_upper", "bb_lower", "volatility")


@dataclass(frozen=True)
class IndicatorConfig:
    sma_window: int = 20
    ema_span: int = 20
    rsi_period: int = 14
    bb_window: int = 20
    bb_k: float = 2.0
    vol_window: int = 12

    def __post_init__(self):
        for name in ("sma_window", "ema_span", "rsi_period", "bb_window", "vol_window"):
            if getattr(self, name) < 2:
                raise MarketDataError(f"{name} must be >= 2")
        if self.vol_window < 3:
            raise MarketDataError("vol_window must be >= 3")
        if self.bb_k <= 0:
            raise MarketDataError("bb_k must be positive")

    def warmup(self) -> int:
        return max(self.sma_window - 1, self.rsi_period, self.bb_window - 1, self.vol_window - 1)


NormStats = dict[str, tuple[float, float]]


@dataclass(frozen=True)
class FeatureFrame:
    """Per-bar z-normalized feature vectors plus the statistics that built them."""

    timestamps: np.ndarray
    names: tuple[str, ...]
    values: np.ndarray  # [N, F], normalized
    norm_stats: NormStats
    warmup_dropped: int

    def __len__(self) -> int:
        return len(self.timestamps)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def denormalize(self) -> np.ndarray:
        """Invert the affine z-map back to raw feature values."""
        raw = np.empty_like(self.values)
        for j, name in enumerate(self.names):
            mean, std = self.norm_stats[name]
            raw[:, j] = self.values[:, j] * std + mean
        return raw


def compute_norm_stats(names: Sequence[str], raw: np.ndarray) -> NormStats:
    """Per-column mean and population standard deviation."""
    return {name: (float(raw[:, j].mean()), float(raw[:, j].std())) for j, name in enumerate(names)}


def apply_norm(raw: np.ndarray, names: Sequence[str], stats: NormStats) -> np.ndarray:
    """z-normalize columns; zero-variance columns map to all zeros."""
    out = np.empty_like(raw)
    for j, name in enumerate(names):
        mean, std = stats[name]
        out[:, j] = (raw[:, j] - mean) / std if std > 0 else 0.0
    return out


def raw_feature_matrix(series: BarSeries, cfg: IndicatorConfig) -> tuple[np.ndarray, np.ndarray, int]:
    """Indicator columns before normalization, trimmed of warm-up rows."""
    warm = cfg.warmup()
    if len(series) <= warm:
        raise MarketDataError(
            f"series of {len(series)} bars shorter than warm-up of {warm} bars"
        )
    closes = series.closes
    mid, upper, lower = bollinger(closes, cfg.bb_window, cfg.bb_k)
    cols = np.column_stack([
        closes,
        sma(closes, cfg.sma_window),
        ema(closes, cfg.ema_span),
        rsi(closes, cfg.rsi_period),
        mid,
        upper,
        lower,
        rolling_volatility(closes, cfg.vol_window),
    ])
    trimmed = cols[warm:]
    if np.isnan(trimmed).any():
        raise MarketDataError("undefined indicator values survived warm-up trimming")
    return trimmed, series.timestamps[warm:].copy(), warm


def build_feature_frame(
    series: BarSeries,
    cfg: IndicatorConfig = IndicatorConfig(),
    norm_source: NormStats | None = None,
) -> FeatureFrame:
    """Engineered feature frame: indicators, warm-up trim, then z-normalization.

    Statistics come from `norm_source` when given (train-range stats applied
    to a test range), otherwise from this frame's own rows.
    """
    raw, timestamps, warm = raw_feature_matrix(series, cfg)
    stats = norm_source if norm_source is not None else compute_norm_stats(FEATURE_COLUMNS, raw)
    return FeatureFrame(
        timestamps=timestamps,
        names=FEATURE_COLUMNS,
        values=apply_norm(raw, FEATURE_COLUMNS, stats),
        norm_stats=dict(stats),
        warmup_dropped=warm,
    )


# ---------------------------------------------------------------------------
# serialization


def norm_stats_to_json(stats: NormStats) -> str:
    return json.dumps({k: {"mean": m, "std": s} for k, (m, s) in stats.items()}, indent=2)


def norm_stats_from_json(text: str) -> NormStats:
    obj = json.loads(text)
    return {k: (float(v["mean"]), float(v["std"])) for k, v in obj.items()}


def write_feature_csv(frame: FeatureFrame, sink) -> None:
    """Feature CSV: timestamp column plus normalized features at 9 significant digits."""
    own = isinstance(sink, (str, Path))
    f: IO[str] = open(sink, "w", newline="") if own else sink
    try:
        f.write("timestamp," + ",".join(frame.names) + "\n")
        for i in range(len(frame)):
            vals = ",".join(f"{v:.9g}" for v in frame.values[i])
            f.write(f"{frame.timestamps[i]},{vals}\n")
    finally:
        if own:
            f.close()


def read_feature_csv(source, norm_stats: NormStats, warmup_dropped: int = 0) -> FeatureFrame:
    """Rebuild a FeatureFrame from the CSV emitted by write_feature_csv."""
    text = _read_text(source)
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    names = tuple(header[1:])
    ts, rows = [], []
    for row in reader:
        if not row:
            continue
        ts.append(int(row[0]))
        rows.append([float(v) for v in row[1:]])
    return FeatureFrame(
        timestamps=np.array(ts, dtype=np.int64),
        names=names,
        values=np.array(rows, dtype=np.float64),
        norm_stats=dict(norm_stats),
        warmup_dropped=warmup_dropped,
    )
