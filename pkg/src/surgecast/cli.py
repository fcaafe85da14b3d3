"""Command-line pipeline: synth -> prepare -> train -> evaluate.

Each stage reads files, writes files, and drops a manifest.json recording
the command, config snapshot, seed, input hashes, and output hashes, so a
rerun with identical inputs is checkable byte for byte. All randomness in a
command flows from its single --seed flag.

Exit codes: 0 success, 2 usage errors, 3 input/config errors, 4 runtime
failures. SURGECAST_LOG sets verbosity (DEBUG/INFO/WARNING).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import evaluation as ev
from . import labeling as lb
from . import market_data as md
from . import models as mm
from . import synthesis as syn
from . import training as tr

log = logging.getLogger("surgecast")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_RUNTIME = 4

_INPUT_ERRORS = (
    md.MarketDataError,
    lb.LabelingError,
    syn.SynthesisError,
    mm.ModelConfigError,
    tr.CheckpointError,
    FileNotFoundError,
    json.JSONDecodeError,
    ValueError,
)


class CliInputError(ValueError):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    obj = json.loads(Path(path).read_text())
    if not isinstance(obj, dict):
        raise CliInputError("--config must contain a JSON object")
    return obj


def _write_manifest(out_dir: Path, command: str, config: dict, seed: int | None,
                    inputs: list[Path], outputs: list[Path], started: float) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "artifacts": {str(p): _sha256(p) for p in outputs},
        "duration_seconds": round(time.time() - started, 3),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _out_dir(args) -> Path:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    started = time.time()
    out = _out_dir(args)
    file_cfg = _load_config(args.config).get("synth", {})
    kwargs = dict(
        n_bars=args.bars,
        surge_count=args.surges,
        seed=args.seed,
    )
    for key in ("start_price", "drift", "vol", "surge_magnitude", "surge_duration",
                "start_timestamp", "interval_seconds", "wick_scale"):
        if key in file_cfg:
            kwargs[key] = file_cfg[key]
    if args.vol is not None:
        kwargs["vol"] = args.vol
    if args.drift is not None:
        kwargs["drift"] = args.drift
    cfg = syn.SynthConfig(**kwargs)

    series, ground_truth = syn.generate_market(cfg)
    ohlc_path = out / "ohlc.csv"
    gt_path = out / "ground_truth.json"
    md.write_ohlc_csv(series, ohlc_path)
    gt_path.write_text(json.dumps(ground_truth) + "\n")
    log.info("wrote %s (%d bars) and %s", ohlc_path, len(series), gt_path)

    _write_manifest(out, "synth", asdict(cfg), args.seed, [], [ohlc_path, gt_path], started)
    return EXIT_OK


def cmd_prepare(args) -> int:
    started = time.time()
    out = _out_dir(args)
    file_cfg = _load_config(args.config)
    in_path = Path(args.input)

    schema = md.CsvSchema(**file_cfg.get("csv_schema", {}))
    ind_cfg = md.IndicatorConfig(**file_cfg.get("indicators", {}))
    lab_kwargs = dict(file_cfg.get("labeling", {}))
    if args.threshold is not None:
        lab_kwargs["uptrend_threshold"] = args.threshold
    lab_cfg = lb.LabelingConfig(**lab_kwargs)

    try:
        series = md.parse_ohlc_csv(in_path, schema)
    except md.MarketDataError as exc:
        raise CliInputError(f"parse stage: {exc}") from exc
    series = md.resample(series, args.factor)
    log.info("resampled to %d bars at %ds interval", len(series), series.interval_seconds)

    frame = md.build_feature_frame(series, ind_cfg)
    targets = lb.label_series(series.closes, lab_cfg)
    train, test = lb.split_chronological(frame, targets, args.cutoff)
    log.info("split: %d train rows, %d test rows", len(train), len(test))

    outputs = []
    for name, ds in (("train", train), ("test", test)):
        fpath = out / f"features_{name}.csv"
        lpath = out / f"labels_{name}.csv"
        md.write_feature_csv(ds.frame, fpath)
        lb.write_labels_csv(ds.frame.timestamps, ds.targets, lpath)
        outputs += [fpath, lpath]
    stats_path = out / "norm_stats.json"
    stats_path.write_text(md.norm_stats_to_json(train.frame.norm_stats) + "\n")
    outputs.append(stats_path)

    config_snapshot = {
        "factor": args.factor,
        "cutoff": args.cutoff,
        "indicators": asdict(ind_cfg),
        "labeling": asdict(lab_cfg),
    }
    _write_manifest(out, "prepare", config_snapshot, None, [in_path], outputs, started)
    return EXIT_OK


def _load_prepared(prepared: Path, split: str, window: int, stride: int):
    stats = md.norm_stats_from_json((prepared / "norm_stats.json").read_text())
    frame = md.read_feature_csv(prepared / f"features_{split}.csv", stats)
    labels = lb.read_labels_csv(prepared / f"labels_{split}.csv")
    targets = lb.TargetSeries(labels=labels, positive_count=int(labels.sum()), events=())
    return lb.make_windows(frame, targets, length=window, stride=stride)


def cmd_train(args) -> int:
    started = time.time()
    out = _out_dir(args)
    file_cfg = _load_config(args.config)
    prepared = Path(args.input)

    win_cfg = file_cfg.get("window", {})
    window = int(win_cfg.get("length", 64))
    stride = int(win_cfg.get("stride", 1))

    train_ws = _load_prepared(prepared, "train", window, stride)
    if len(np.unique(train_ws.y)) < 2:
        raise CliInputError("training windows contain a single class; adjust labeling or data")

    n_val = max(1, len(train_ws) // 10)  # trailing 10% of the training range
    val_ws = lb.WindowSet(x=train_ws.x[-n_val:], y=train_ws.y[-n_val:],
                          end_indices=train_ws.end_indices[-n_val:])
    fit_ws = lb.WindowSet(x=train_ws.x[:-n_val], y=train_ws.y[:-n_val],
                          end_indices=train_ws.end_indices[:-n_val])

    model_kwargs = dict(file_cfg.get("model", {}))
    model_kwargs.update(arch=args.arch, n_features=train_ws.x.shape[2], window=window)
    model_cfg = mm.ModelConfig(**model_kwargs)

    train_kwargs = dict(file_cfg.get("train", {}))
    train_kwargs.update(epochs=args.epochs, seed=args.seed)
    if args.batch_size is not None:
        train_kwargs["batch_size"] = args.batch_size
    if args.lr is not None:
        train_kwargs["lr"] = args.lr
    if args.class_weights is not None:
        train_kwargs["class_weight_mode"] = args.class_weights
    train_cfg = tr.TrainConfig(**train_kwargs)

    log.info("training %s: %d windows (%d positive), %d epochs",
             args.arch, len(fit_ws), int(fit_ws.y.sum()), args.epochs)
    try:
        ckpt = tr.train(model_cfg, fit_ws, train_cfg, val_set=val_ws)
    except tr.TrainingDivergedError:
        raise  # runtime failure, surfaced with diagnostics by main()

    ckpt_path = out / "checkpoint.bin"
    hist_path = out / "history.jsonl"
    tr.save_checkpoint(ckpt, ckpt_path)
    tr.write_history_jsonl(ckpt.history, hist_path)
    if ckpt.history:
        log.info("final train loss %.4f", ckpt.history[-1]["train_loss"])

    config_snapshot = {
        "arch": args.arch,
        "window": {"length": window, "stride": stride},
        "model": asdict(model_cfg),
        "train": asdict(train_cfg),
    }
    inputs = [prepared / "features_train.csv", prepared / "labels_train.csv",
              prepared / "norm_stats.json"]
    _write_manifest(out, "train", config_snapshot, args.seed, inputs, [ckpt_path, hist_path], started)
    return EXIT_OK


def _parse_sweep(spec: str) -> np.ndarray:
    try:
        if ":" in spec:
            bounds, step = spec.split(":")
            lo, hi = bounds.split("..")
            step = float(step)
        else:
            lo, hi = spec.split("..")
            step = 0.05
        lo, hi = float(lo), float(hi)
    except ValueError:
        raise CliInputError(f"bad sweep spec {spec!r}; expected LO..HI or LO..HI:STEP") from None
    if not (0 <= lo <= hi <= 1):
        raise CliInputError("sweep bounds must satisfy 0 <= lo <= hi <= 1")
    return np.arange(lo, hi + step / 2, step)


def cmd_evaluate(args) -> int:
    started = time.time()
    out = _out_dir(args)
    file_cfg = _load_config(args.config)
    prepared = Path(args.input)
    ckpt_path = Path(args.checkpoint)

    ckpt = tr.load_checkpoint(ckpt_path)
    win_cfg = file_cfg.get("window", {})
    stride = int(win_cfg.get("eval_stride", win_cfg.get("stride", 1)))
    test_ws = _load_prepared(prepared, "test", ckpt.model_config.window, stride)

    report = ev.classification_report(ckpt, test_ws, threshold=args.threshold)
    report_path = out / "report.json"
    report_path.write_text(ev.report_to_json(report) + "\n")
    print(ev.format_report(report))

    outputs = [report_path]
    if args.sweep:
        rows = ev.threshold_sweep(ckpt, test_ws, _parse_sweep(args.sweep))
        sweep_path = out / "sweep.csv"
        ev.write_sweep_csv(rows, sweep_path)
        outputs.append(sweep_path)

    config_snapshot = {"threshold": args.threshold, "sweep": args.sweep,
                       "window": {"length": ckpt.model_config.window, "stride": stride}}
    inputs = [ckpt_path, prepared / "features_test.csv", prepared / "labels_test.csv"]
    _write_manifest(out, "evaluate", config_snapshot, None, inputs, outputs, started)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="surgecast",
        description="Uptrend prediction pipeline on OHLC data: synthesize, prepare, train, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic OHLC market with injected surges")
    p.add_argument("--bars", type=int, required=True, help="number of bars to generate")
    p.add_argument("--surges", type=int, default=0, help="number of injected uptrend surges")
    p.add_argument("--vol", type=float, default=None, help="per-bar log-price volatility")
    p.add_argument("--drift", type=float, default=None, help="per-bar log-price drift")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--config", default=None, help="JSON config file; flags take precedence")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="parse, resample, engineer features, label, split")
    p.add_argument("--input", required=True, help="OHLC CSV file")
    p.add_argument("--factor", type=int, default=1, help="resample factor")
    p.add_argument("--cutoff", type=int, required=True, help="train/test split epoch seconds")
    p.add_argument("--threshold", type=float, default=None, help="uptrend delta threshold")
    p.add_argument("--output-dir", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model on a prepared dataset")
    p.add_argument("--input", required=True, help="prepared dataset directory")
    p.add_argument("--arch", required=True, choices=mm.ARCHITECTURES)
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--class-weights", choices=("none", "balanced"), default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="report test metrics for a checkpoint")
    p.add_argument("--input", required=True, help="prepared dataset directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--sweep", default=None, help="threshold sweep, e.g. 0.05..0.95 or 0.1..0.9:0.1")
    p.add_argument("--output-dir", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("SURGECAST_LOG", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with code 2 on usage errors
    try:
        return args.func(args)
    except tr.TrainingError as exc:
        log.error("runtime failure: %s", exc)
        return EXIT_RUNTIME
    except _INPUT_ERRORS as exc:
        log.error("input error: %s", exc)
        return EXIT_INPUT
    except Exception as exc:  # unexpected bug: still a runtime failure exit
        log.exception("internal error: %s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
