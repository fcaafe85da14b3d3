#!/usr/bin/env python3
"""End-to-end learning experiment: synthetic market -> features -> labels ->
three trained classifiers -> test-split class-1 F1 comparison.

Also prints the observable-condition oracle F1, which is the Bayes ceiling
for this label construction (confirmation depends on two future bars).
"""

import argparse
import time

import numpy as np

from surgecast import evaluation as ev
from surgecast import labeling as lb
from surgecast import market_data as md
from surgecast import models as mm
from surgecast import synthesis as syn
from surgecast import training as tr


def build_dataset(seed, vol, drift, bars, stride, test_frac=0.15, interval=300, eval_stride=1):
    cfg = syn.SynthConfig(
        n_bars=bars, vol=vol, drift=drift, surge_count=20, surge_magnitude=0.012,
        seed=seed, interval_seconds=interval,
    )
    series, ground_truth = syn.generate_market(cfg)
    frame = md.build_feature_frame(series)
    targets = lb.label_series(series.closes)
    cutoff = int(frame.timestamps[int(len(frame) * (1 - test_frac))])
    train, test = lb.split_chronological(frame, targets, cutoff)
    train_ws = lb.make_windows(train.frame, train.targets, length=64, stride=stride)
    test_ws = lb.make_windows(test.frame, test.targets, length=64, stride=eval_stride)
    return train_ws, test_ws, targets


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--vol", type=float, default=0.004)
    ap.add_argument("--drift", type=float, default=0.0)
    ap.add_argument("--bars", type=int, default=50_000)
    ap.add_argument("--stride", type=int, default=10)
    ap.add_argument("--eval-stride", type=int, default=1)
    ap.add_argument("--epochs", type=str, default="100,50,10",
                    help="simple,conv,breakgpt epoch budgets")
    ap.add_argument("--archs", type=str, default="conv,simple,breakgpt")
    args = ap.parse_args()

    t0 = time.time()
    train_ws, test_ws, targets = build_dataset(args.seed, args.vol, args.drift, args.bars, args.stride)
    ep_simple, ep_conv, ep_gpt = (int(x) for x in args.epochs.split(","))
    budgets = {"simple": ep_simple, "conv": ep_conv, "breakgpt": ep_gpt}

    print(f"train windows: {len(train_ws)} ({train_ws.y.mean():.3%} positive)")
    print(f"test windows:  {len(test_ws)} ({test_ws.y.mean():.3%} positive)")
    print(f"bar-level positive rate: {targets.positive_count / len(targets.labels):.3%}")
    print(f"dataset built in {time.time() - t0:.0f}s")

    results = {}
    for arch in args.archs.split(","):
        t1 = time.time()
        model_cfg = mm.ModelConfig(arch=arch, n_features=train_ws.x.shape[2])
        ckpt = tr.train(model_cfg, train_ws, tr.TrainConfig(epochs=budgets[arch], seed=args.seed))
        train_report = ev.classification_report(ckpt, train_ws)
        report = ev.classification_report(ckpt, test_ws)
        m = report.per_class["Uptrend"]
        results[arch] = m.f1
        print(
            f"{arch:>9}: {budgets[arch]:>3} epochs in {time.time() - t1:5.0f}s | "
            f"train F1_1 {train_report.per_class['Uptrend'].f1:.3f} | "
            f"test P1 {m.precision:.3f} R1 {m.recall:.3f} F1_1 {m.f1:.3f} "
            f"acc {report.accuracy:.3f} macro {report.macro_f1:.3f}"
        )
        sweep = ev.threshold_sweep(ckpt, test_ws, np.linspace(0.05, 0.95, 19))
        best = max(sweep, key=lambda r: r[3])
        print(f"          test sweep max: t={best[0]:.2f} P {best[1]:.3f} R {best[2]:.3f} F1 {best[3]:.3f}")

    print({k: round(v, 4) for k, v in results.items()})
    print(f"total {time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()
