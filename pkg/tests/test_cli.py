import json
from pathlib import Path

import numpy as np
import pytest

from surgecast import cli
from surgecast import evaluation as ev
from surgecast import market_data as md
from surgecast import training as tr


TINY_MODEL = {
    "model": {"d_model": 8, "n_heads": 2, "n_layers": 1, "ff_dim": 16, "dropout_p": 0.0},
    "window": {"length": 16, "stride": 4},
}


def run(*argv):
    return cli.main([str(a) for a in argv])


def synth_dir(tmp_path, bars=4000, surges=4, seed=3, vol=0.002):
    out = tmp_path / "synth"
    code = run("synth", "--bars", bars, "--surges", surges, "--vol", vol,
               "--seed", seed, "--output-dir", out)
    assert code == 0
    return out


def prepared_dir(tmp_path, **synth_kw):
    out = synth_dir(tmp_path, **synth_kw)
    series = md.parse_ohlc_csv(out / "ohlc.csv", md.CsvSchema(interval_seconds=60))
    cutoff = int(series.timestamps[int(len(series) * 0.8)])
    prep = tmp_path / "prep"
    code = run("prepare", "--input", out / "ohlc.csv", "--cutoff", cutoff,
               "--output-dir", prep)
    assert code == 0
    return prep


def write_cfg(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(TINY_MODEL))
    return cfg_path


# ---------------------------------------------------------------------------
# synth


def test_synth_row_count(tmp_path):
    out = synth_dir(tmp_path, bars=3000, surges=3)
    lines = (out / "ohlc.csv").read_text().strip().splitlines()
    assert len(lines) == 3001  # header + bars
    gt = json.loads((out / "ground_truth.json").read_text())
    assert isinstance(gt, list) and len(gt) == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "synth"
    assert str(out / "ohlc.csv") in manifest["artifacts"]


def test_synth_rerun_byte_identical(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    for out in (a, b):
        assert run("synth", "--bars", 2000, "--surges", 2, "--vol", 0.001,
                   "--seed", 11, "--output-dir", out) == 0
    assert (a / "ohlc.csv").read_bytes() == (b / "ohlc.csv").read_bytes()
    assert (a / "ground_truth.json").read_bytes() == (b / "ground_truth.json").read_bytes()


def test_synth_placement_error_writes_nothing(tmp_path):
    out = tmp_path / "bad"
    code = run("synth", "--bars", 300, "--surges", 50, "--output-dir", out)
    assert code == cli.EXIT_INPUT
    assert not (out / "ohlc.csv").exists()
    assert not (out / "manifest.json").exists()


# ---------------------------------------------------------------------------
# prepare


def test_prepare_resample_factor(tmp_path):
    out = synth_dir(tmp_path, bars=6000, surges=0)
    series = md.parse_ohlc_csv(out / "ohlc.csv", md.CsvSchema(interval_seconds=60))
    cutoff = int(series.timestamps[4000])
    prep = tmp_path / "prep5"
    assert run("prepare", "--input", out / "ohlc.csv", "--factor", 5,
               "--cutoff", cutoff, "--output-dir", prep) == 0
    header, first, second = (prep / "features_train.csv").read_text().splitlines()[:3]
    t0, t1 = int(first.split(",")[0]), int(second.split(",")[0])
    assert t1 - t0 == 300


def test_prepare_deterministic(tmp_path):
    out = synth_dir(tmp_path, bars=3000, surges=2)
    series = md.parse_ohlc_csv(out / "ohlc.csv", md.CsvSchema(interval_seconds=60))
    cutoff = int(series.timestamps[2400])
    hashes = []
    for name in ("p1", "p2"):
        prep = tmp_path / name
        assert run("prepare", "--input", out / "ohlc.csv", "--cutoff", cutoff,
                   "--output-dir", prep) == 0
        manifest = json.loads((prep / "manifest.json").read_text())
        hashes.append({Path(k).name: v for k, v in manifest["artifacts"].items()})
    assert hashes[0] == hashes[1]


def test_prepare_empty_split_is_input_error(tmp_path):
    out = synth_dir(tmp_path, bars=2000, surges=0)
    assert run("prepare", "--input", out / "ohlc.csv", "--cutoff", 99,
               "--output-dir", tmp_path / "p") == cli.EXIT_INPUT


def test_prepare_missing_input(tmp_path):
    assert run("prepare", "--input", tmp_path / "nope.csv", "--cutoff", 100,
               "--output-dir", tmp_path / "p") == cli.EXIT_INPUT


# ---------------------------------------------------------------------------
# train


def test_train_epochs_zero_equals_init(tmp_path):
    prep = prepared_dir(tmp_path)
    cfg = write_cfg(tmp_path)
    out = tmp_path / "run"
    assert run("train", "--input", prep, "--arch", "simple", "--epochs", 0,
               "--seed", 5, "--output-dir", out, "--config", cfg) == 0
    ckpt = tr.load_checkpoint(out / "checkpoint.bin")
    from surgecast import models as mm

    init = mm.init_model(ckpt.model_config, seed=5)
    for name, p in init.items():
        assert np.array_equal(ckpt.params[name], p.data)


def test_train_unknown_arch_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run("train", "--input", tmp_path, "--arch", "lstm", "--epochs", 1,
            "--output-dir", tmp_path / "x")
    assert exc.value.code == cli.EXIT_USAGE


def test_train_and_evaluate_round_trip(tmp_path):
    prep = prepared_dir(tmp_path, bars=5000, surges=4, vol=0.003)
    cfg = write_cfg(tmp_path)
    out = tmp_path / "run"
    assert run("train", "--input", prep, "--arch", "breakgpt", "--epochs", 2,
               "--seed", 1, "--output-dir", out, "--config", cfg) == 0
    assert (out / "checkpoint.bin").exists()
    history = [json.loads(line) for line in (out / "history.jsonl").read_text().splitlines()]
    assert [h["epoch"] for h in history] == [1, 2]

    rep_dir = tmp_path / "rep"
    assert run("evaluate", "--input", prep, "--checkpoint", out / "checkpoint.bin",
               "--sweep", "0.1..0.9:0.1", "--output-dir", rep_dir, "--config", cfg) == 0
    report = ev.report_from_json((rep_dir / "report.json").read_text())
    assert report.macro_f1 == pytest.approx(
        (report.per_class["NoUptrend"].f1 + report.per_class["Uptrend"].f1) / 2, abs=1e-6
    )
    sweep_lines = (rep_dir / "sweep.csv").read_text().strip().splitlines()
    assert sweep_lines[0] == "threshold,precision1,recall1,f1_1"
    recalls = [float(line.split(",")[2]) for line in sweep_lines[1:]]
    assert all(a >= b - 1e-9 for a, b in zip(recalls, recalls[1:]))


def test_train_rerun_identical_checkpoint(tmp_path):
    prep = prepared_dir(tmp_path)
    cfg = write_cfg(tmp_path)
    blobs = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        assert run("train", "--input", prep, "--arch", "conv", "--epochs", 1,
                   "--seed", 9, "--output-dir", out, "--config", cfg) == 0
        blobs.append((out / "checkpoint.bin").read_bytes())
    assert blobs[0] == blobs[1]


def test_evaluate_bad_checkpoint_is_input_error(tmp_path):
    prep = prepared_dir(tmp_path)
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"not a checkpoint at all")
    assert run("evaluate", "--input", prep, "--checkpoint", bad,
               "--output-dir", tmp_path / "r") == cli.EXIT_INPUT


def test_sweep_spec_parsing():
    vals = cli._parse_sweep("0.1..0.3:0.1")
    assert np.allclose(vals, [0.1, 0.2, 0.3])
    with pytest.raises(cli.CliInputError):
        cli._parse_sweep("nonsense")


def test_prepare_cutoff_reserves_final_month(tmp_path):
    # half a year of 4-hour bars starting Feb 1; cutoff Jul 15 reserves ~1 month
    feb1, jul15, aug15 = 1_706_745_600, 1_721_001_600, 1_723_680_000
    bars = (aug15 - feb1) // 14400
    out = tmp_path / "synth"
    cfg = tmp_path / "synth_cfg.json"
    cfg.write_text(json.dumps({"synth": {"interval_seconds": 14400, "vol": 0.004}}))
    assert run("synth", "--bars", bars, "--seed", 2, "--output-dir", out, "--config", cfg) == 0
    prep = tmp_path / "prep"
    assert run("prepare", "--input", out / "ohlc.csv", "--cutoff", jul15,
               "--output-dir", prep) == 0
    n_train = len((prep / "features_train.csv").read_text().splitlines()) - 1
    n_test = len((prep / "features_test.csv").read_text().splitlines()) - 1
    frac = n_test / (n_train + n_test)
    reserved = (aug15 - jul15) / (aug15 - feb1)
    assert abs(frac - reserved) < 0.02


def test_diverged_training_is_runtime_error(tmp_path):
    prep = prepared_dir(tmp_path)
    # poison the prepared features so the first forward pass overflows
    fpath = prep / "features_train.csv"
    lines = fpath.read_text().splitlines()
    parts = lines[1].split(",")
    lines[1] = ",".join([parts[0]] + ["nan"] * (len(parts) - 1))
    fpath.write_text("\n".join(lines) + "\n")
    cfg = write_cfg(tmp_path)
    code = run("train", "--input", prep, "--arch", "simple", "--epochs", 1,
               "--output-dir", tmp_path / "x", "--config", cfg)
    assert code == cli.EXIT_RUNTIME
