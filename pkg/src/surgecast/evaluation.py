"""Confusion-matrix metrics and per-class classification reports.

Class 1 (uptrend) is the positive class. Degenerate 0/0 ratios are defined
as 0 so reports stay total on pathological predictions. Floats serialize at
six decimals; presentation rounding to two decimals happens only at print.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .labeling import WindowSet
from .models import predict_logits

CLASS_NAMES = ("NoUptrend", "Uptrend")


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class MetricsReport:
    model: str
    threshold: float
    accuracy: float
    macro_f1: float
    per_class: dict[str, ClassMetrics]
    confusion: ConfusionMatrix


def confusion(preds: Sequence[int], labels: Sequence[int]) -> ConfusionMatrix:
    p = np.asarray(preds)
    y = np.asarray(labels)
    if p.shape != y.shape or p.size == 0:
        raise EvaluationError(f"preds and labels must be equal-length and non-empty: {p.shape} vs {y.shape}")
    return ConfusionMatrix(
        tp=int(((p == 1) & (y == 1)).sum()),
        fp=int(((p == 1) & (y == 0)).sum()),
        tn=int(((p == 0) & (y == 0)).sum()),
        fn=int(((p == 0) & (y == 1)).sum()),
    )


def precision_recall_f1(cm: ConfusionMatrix, positive_class: int = 1) -> tuple[float, float, float]:
    """p = tp/(tp+fp), r = tp/(tp+fn), f1 harmonic mean; 0/0 counts as 0."""
    if positive_class == 1:
        tp, fp, fn = cm.tp, cm.fp, cm.fn
    else:
        tp, fp, fn = cm.tn, cm.fn, cm.fp
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def f1_from_precision_recall(p: float, r: float) -> float:
    """Harmonic mean of precision and recall; 0 when both vanish."""
    return 2 * p * r / (p + r) if p + r else 0.0


def macro_f1(per_class: dict[str, ClassMetrics]) -> float:
    """Unweighted mean of the two per-class F1 scores."""
    return sum(m.f1 for m in per_class.values()) / len(per_class)


def report_from_predictions(
    preds: Sequence[int],
    labels: Sequence[int],
    threshold: float = 0.5,
    model: str = "",
) -> MetricsReport:
    cm = confusion(preds, labels)
    per_class: dict[str, ClassMetrics] = {}
    y = np.asarray(labels)
    for cls, name in enumerate(CLASS_NAMES):
        p, r, f1 = precision_recall_f1(cm, positive_class=cls)
        per_class[name] = ClassMetrics(precision=p, recall=r, f1=f1, support=int((y == cls).sum()))
    return MetricsReport(
        model=model,
        threshold=threshold,
        accuracy=cm.accuracy,
        macro_f1=macro_f1(per_class),
        per_class=per_class,
        confusion=cm,
    )


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def predictions_from_logits(logits: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """argmax at threshold 0.5, otherwise class 1 iff P(uptrend) > threshold."""
    if threshold == 0.5:
        return logits.argmax(axis=-1)
    probs = _softmax_rows(logits)[:, 1]
    return (probs > threshold).astype(np.int64)


def classification_report(ckpt, windows: WindowSet, threshold: float = 0.5) -> MetricsReport:
    """Deterministic evaluation-mode report for a checkpointed model."""
    cfg = ckpt.model_config
    if windows.x.shape[1] != cfg.window or windows.x.shape[2] != cfg.n_features:
        raise EvaluationError(
            f"window shape {windows.x.shape[1:]} does not match model ({cfg.window}, {cfg.n_features})"
        )
    logits = predict_logits(windows.x, ckpt.param_tensors(), cfg)
    preds = predictions_from_logits(logits, threshold)
    return report_from_predictions(preds, windows.y, threshold=threshold, model=cfg.arch)


def threshold_sweep(ckpt, windows: WindowSet, thresholds: Sequence[float]) -> list[tuple[float, float, float, float]]:
    """Rows of (threshold, precision_1, recall_1, f1_1), plot-ready."""
    logits = predict_logits(windows.x, ckpt.param_tensors(), ckpt.model_config)
    rows = []
    for t in thresholds:
        preds = predictions_from_logits(logits, t)
        cm = confusion(preds, windows.y)
        p, r, f1 = precision_recall_f1(cm, positive_class=1)
        rows.append((float(t), p, r, f1))
    return rows


def write_sweep_csv(rows: Sequence[tuple[float, float, float, float]], sink) -> None:
    own = isinstance(sink, (str, Path))
    f = open(sink, "w", newline="") if own else sink
    try:
        f.write("threshold,precision1,recall1,f1_1\n")
        for t, p, r, f1 in rows:
            f.write(f"{t:.6f},{p:.6f},{r:.6f},{f1:.6f}\n")
    finally:
        if own:
            f.close()


# ---------------------------------------------------------------------------
# serialization


def _round6(x: float) -> float:
    return round(float(x), 6)


def report_to_dict(report: MetricsReport) -> dict:
    return {
        "model": report.model,
        "threshold": _round6(report.threshold),
        "accuracy": _round6(report.accuracy),
        "macro_f1": _round6(report.macro_f1),
        "per_class": {
            name: {
                "precision": _round6(m.precision),
                "recall": _round6(m.recall),
                "f1": _round6(m.f1),
                "support": m.support,
            }
            for name, m in report.per_class.items()
        },
        "confusion": {
            "tp": report.confusion.tp,
            "fp": report.confusion.fp,
            "tn": report.confusion.tn,
            "fn": report.confusion.fn,
        },
    }


def report_to_json(report: MetricsReport) -> str:
    return json.dumps(report_to_dict(report), indent=2, sort_keys=True)


def report_from_json(text: str) -> MetricsReport:
    obj = json.loads(text)
    cm = ConfusionMatrix(**obj["confusion"])
    per_class = {name: ClassMetrics(**vals) for name, vals in obj["per_class"].items()}
    return MetricsReport(
        model=obj["model"],
        threshold=obj["threshold"],
        accuracy=obj["accuracy"],
        macro_f1=obj["macro_f1"],
        per_class=per_class,
        confusion=cm,
    )


def format_report(report: MetricsReport) -> str:
    """Two-decimal table in the shape of the classification results table."""
    lines = [
        f"model: {report.model}   threshold: {report.threshold:g}",
        f"{'class':<12}{'precision':>10}{'recall':>8}{'f1':>7}{'support':>9}",
    ]
    for name, m in report.per_class.items():
        lines.append(
            f"{name:<12}{m.precision:>10.2f}{m.recall:>8.2f}{m.f1:>7.2f}{m.support:>9d}"
        )
    lines.append(f"accuracy: {report.accuracy:.2f}   macro F1: {report.macro_f1:.2f}")
    return "\n".join(lines)
