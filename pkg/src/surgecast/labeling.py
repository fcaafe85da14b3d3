"""Swing-point detection and binary uptrend targets.

A bar is a local extremum when its close is strictly beyond every other
close in a centered window; chains of K+1 same-kind extrema classify swing
structure (HH/LH on maxima, LL/HL on minima). A confirmed HH whose chain
return exceeds the uptrend threshold labels that bar 1.

The centered window means label construction looks half a window into the
future. That lookahead exists only in the ground truth, never in features.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Sequence

import numpy as np

from .market_data import FeatureFrame, apply_norm, compute_norm_stats


class LabelingError(ValueError):
    pass


@dataclass(frozen=True)
class ExtremumPoint:
    index: int
    price: float
    kind: str  # "max" | "min"


@dataclass(frozen=True)
class SwingEvent:
    index: int          # bar index of the confirming extremum
    kind: str           # "HH" | "LL" | "HL" | "LH"
    delta_p: float      # (P_end - P_start) / P_start over the confirming chain
    confirmed_by: tuple[int, ...]  # indices of the prior extrema in the chain


@dataclass(frozen=True)
class LabelingConfig:
    extrema_window: int = 5
    confirmations: int = 2  # K prior same-kind extrema confirm a trend
    uptrend_threshold: float = 0.005

    def __post_init__(self):
        if self.extrema_window < 3 or self.extrema_window % 2 == 0:
            raise LabelingError("extrema_window must be odd and >= 3")
        if self.confirmations < 1:
            raise LabelingError("confirmations must be >= 1")
        if self.uptrend_threshold <= 0:
            raise LabelingError("uptrend_threshold must be positive")


@dataclass(frozen=True)
class TargetSeries:
    labels: np.ndarray            # {0,1} aligned to bar indices
    positive_count: int
    events: tuple[SwingEvent, ...]


def find_local_extrema(prices: Sequence[float], window: int) -> list[ExtremumPoint]:
    """Strict centered-window extrema; plateaus and endpoints yield nothing."""
    if window % 2 == 0:
        raise LabelingError(f"extrema window must be odd, got {window}")
    if window < 3:
        raise LabelingError("extrema window must be >= 3")
    p = np.asarray(prices, dtype=np.float64)
    n = p.size
    if n < window:
        raise LabelingError(f"need at least {window} prices, got {n}")
    half = window // 2

    win = np.lib.stride_tricks.sliding_window_view(p, window)  # [n-window+1, window]
    center = win[:, half]
    hi = win.max(axis=1)
    lo = win.min(axis=1)
    # strict: the center must be the unique extreme value of its window
    is_max = (center == hi) & ((win == hi[:, None]).sum(axis=1) == 1)
    is_min = (center == lo) & ((win == lo[:, None]).sum(axis=1) == 1)

    out: list[ExtremumPoint] = []
    for offset in np.where(is_max | is_min)[0]:
        i = int(offset) + half
        kind = "max" if is_max[offset] else "min"
        out.append(ExtremumPoint(index=i, price=float(p[i]), kind=kind))
    return out


def classify_swings(extrema: Sequence[ExtremumPoint], confirmations: int = 2) -> list[SwingEvent]:
    """Classify each extremum against its K predecessors of the same kind.

    A strictly increasing chain of K+1 maxima emits HH at the newest one,
    strictly decreasing emits LH; minima mirror this (decreasing -> LL,
    increasing -> HL). Chains of maxima and minima are tracked independently.
    delta_p runs from the oldest extremum in the chain to the confirming one.
    """
    if confirmations < 1:
        raise LabelingError("confirmations must be >= 1")
    k = confirmations
    events: list[SwingEvent] = []
    history: dict[str, list[ExtremumPoint]] = {"max": [], "min": []}
    for ext in extrema:
        prior = history[ext.kind]
        if len(prior) >= k:
            chain = prior[-k:] + [ext]
            prices = [c.price for c in chain]
            increasing = all(prices[i] < prices[i + 1] for i in range(k))
            decreasing = all(prices[i] > prices[i + 1] for i in range(k))
            kind = None
            if ext.kind == "max":
                kind = "HH" if increasing else "LH" if decreasing else None
            else:
                kind = "LL" if decreasing else "HL" if increasing else None
            if kind is not None:
                start, end = chain[0].price, chain[-1].price
                events.append(
                    SwingEvent(
                        index=ext.index,
                        kind=kind,
                        delta_p=(end - start) / start,
                        confirmed_by=tuple(c.index for c in chain[:-1]),
                    )
                )
        prior.append(ext)
    return events


def uptrend_targets(
    prices: Sequence[float],
    events: Sequence[SwingEvent],
    threshold: float = 0.005,
) -> TargetSeries:
    """Label 1 exactly at bars where an HH event confirms with delta_p > threshold."""
    n = len(prices)
    labels = np.zeros(n, dtype=np.int64)
    for ev in events:
        if not (0 <= ev.index < n):
            raise LabelingError(f"event index {ev.index} outside series of {n} bars")
        if ev.kind == "HH" and ev.delta_p > threshold:
            labels[ev.index] = 1
    return TargetSeries(labels=labels, positive_count=int(labels.sum()), events=tuple(events))


def label_series(prices: Sequence[float], cfg: LabelingConfig = LabelingConfig()) -> TargetSeries:
    """Extrema -> swings -> targets in one pass."""
    extrema = find_local_extrema(prices, cfg.extrema_window)
    events = classify_swings(extrema, cfg.confirmations)
    return uptrend_targets(prices, events, cfg.uptrend_threshold)


# ---------------------------------------------------------------------------
# dataset assembly


@dataclass(frozen=True)
class Dataset:
    frame: FeatureFrame
    targets: TargetSeries

    def __len__(self) -> int:
        return len(self.frame)


def _slice_targets(targets: TargetSeries, start: int, stop: int) -> TargetSeries:
    labels = targets.labels[start:stop]
    events = tuple(
        replace(ev, index=ev.index - start,
                confirmed_by=tuple(i - start for i in ev.confirmed_by))
        for ev in targets.events
        if start <= ev.index < stop
    )
    return TargetSeries(labels=labels.copy(), positive_count=int(labels.sum()), events=events)


def align_targets(frame: FeatureFrame, targets: TargetSeries) -> TargetSeries:
    """Trim bar-aligned targets down to the frame's warm-up-trimmed rows."""
    if len(targets.labels) == len(frame):
        return targets
    expected = len(frame) + frame.warmup_dropped
    if len(targets.labels) != expected:
        raise LabelingError(
            f"targets cover {len(targets.labels)} bars; frame expects {len(frame)} or {expected}"
        )
    return _slice_targets(targets, frame.warmup_dropped, len(targets.labels))


def split_chronological(frame: FeatureFrame, targets: TargetSeries, cutoff: int) -> tuple[Dataset, Dataset]:
    """Train/test split at an epoch-seconds cutoff; train stats renormalize both sides."""
    targets = align_targets(frame, targets)
    ts = frame.timestamps
    if cutoff <= ts[0] or cutoff > ts[-1]:
        raise LabelingError(f"cutoff {cutoff} outside timestamp range [{ts[0]}, {ts[-1]}]")
    n_train = int(np.searchsorted(ts, cutoff, side="left"))
    if n_train == 0 or n_train == len(ts):
        raise LabelingError("cutoff produces an empty split")

    raw = frame.denormalize()
    train_stats = compute_norm_stats(frame.names, raw[:n_train])

    def rebuild(rows: slice) -> FeatureFrame:
        return FeatureFrame(
            timestamps=ts[rows].copy(),
            names=frame.names,
            values=apply_norm(raw[rows], frame.names, train_stats),
            norm_stats=dict(train_stats),
            warmup_dropped=frame.warmup_dropped,
        )

    train = Dataset(rebuild(slice(0, n_train)), _slice_targets(targets, 0, n_train))
    test = Dataset(rebuild(slice(n_train, len(ts))), _slice_targets(targets, n_train, len(ts)))
    return train, test


@dataclass(frozen=True)
class WindowSet:
    """Fixed-length feature windows, each labeled by its final bar."""

    x: np.ndarray  # [N, L, F]
    y: np.ndarray  # [N]
    end_indices: np.ndarray = field(default=None)  # frame row of each window's last bar

    def __len__(self) -> int:
        return len(self.y)

    def __getitem__(self, i: int) -> tuple[np.ndarray, int]:
        return self.x[i], int(self.y[i])


def make_windows(frame: FeatureFrame, targets: TargetSeries, length: int, stride: int = 1) -> WindowSet:
    """Sliding windows over the frame; window ending at row i takes labels[i]."""
    targets = align_targets(frame, targets)
    n = len(frame)
    if length > n:
        raise LabelingError(f"window length {length} exceeds {n} rows")
    if stride < 1:
        raise LabelingError("stride must be >= 1")
    ends = np.arange(length - 1, n, stride)
    x = np.stack([frame.values[e - length + 1:e + 1] for e in ends])
    y = targets.labels[ends]
    return WindowSet(x=x, y=y.astype(np.int64), end_indices=ends)


def write_labels_csv(frame_timestamps: np.ndarray, targets: TargetSeries, sink) -> None:
    """Labels CSV: timestamp,label plus event kind and delta_p on confirming bars."""
    by_index = {ev.index: ev for ev in targets.events}
    own = isinstance(sink, (str, Path))
    f: IO[str] = open(sink, "w", newline="") if own else sink
    try:
        f.write("timestamp,label,event_kind,delta_p\n")
        for i, ts in enumerate(frame_timestamps):
            ev = by_index.get(i)
            if ev is None:
                f.write(f"{ts},{targets.labels[i]},,\n")
            else:
                f.write(f"{ts},{targets.labels[i]},{ev.kind},{ev.delta_p:.9g}\n")
    finally:
        if own:
            f.close()


def read_labels_csv(source) -> np.ndarray:
    """Recover the {0,1} label vector from a labels CSV."""
    from .market_data import _read_text

    lines = _read_text(source).strip().splitlines()
    return np.array([int(line.split(",")[1]) for line in lines[1:]], dtype=np.int64)
