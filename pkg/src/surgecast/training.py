"""Deterministic training loop, class weighting, and checkpoint persistence.

Checkpoint files are little-endian binary: magic "SRGC", a u32 format
version, a length-prefixed JSON block (configs, epoch, history), parameter
records, Adam moment records in the same layout, and a trailing CRC32 of
everything between the magic and the checksum. Corruption surfaces as a
typed CheckpointError, never a crash.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import evaluation
from .autodiff import Tensor
from .labeling import WindowSet
from .models import ModelConfig, PROMPT_TEXT, forward, init_model


class TrainingError(RuntimeError):
    pass


class TrainingDivergedError(TrainingError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    class_weight_mode: str = "balanced"  # "none" | "balanced"
    seed: int = 0
    eval_every: int = 10

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.class_weight_mode not in ("none", "balanced"):
            raise ValueError(f"unknown class_weight_mode {self.class_weight_mode!r}")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


def compute_class_weights(labels: Sequence[int], mode: str = "balanced") -> np.ndarray:
    """Balanced weights w_c = N / (2 * N_c); averages to 1 across samples."""
    y = np.asarray(labels)
    if mode == "none":
        return np.array([1.0, 1.0])
    n0 = int((y == 0).sum())
    n1 = int((y == 1).sum())
    if n0 == 0 or n1 == 0:
        raise TrainingError("both classes must be present to compute class weights")
    n = n0 + n1
    return np.array([n / (2.0 * n0), n / (2.0 * n1)])


@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    adam_t: int
    epoch: int
    history: list[dict] = field(default_factory=list)
    train_config: dict | None = None
    prompt_text: str | None = None

    def param_tensors(self) -> dict[str, Tensor]:
        return {k: Tensor(v.copy(), requires_grad=True) for k, v in self.params.items()}


def _epoch_rng(seed: int, tag: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, tag, epoch]))


def train(
    model_cfg: ModelConfig,
    train_set: WindowSet,
    cfg: TrainConfig,
    val_set: WindowSet | None = None,
) -> Checkpoint:
    """Minibatch Adam on class-weighted cross-entropy, reproducible from seed."""
    if len(train_set) == 0:
        raise TrainingError("empty training set")
    params = init_model(model_cfg, seed=cfg.seed)
    state = ad.AdamState.for_params(params)
    weights = compute_class_weights(train_set.y, cfg.class_weight_mode)

    x_all = np.ascontiguousarray(train_set.x, dtype=np.float32)
    y_all = np.asarray(train_set.y, dtype=np.int64)

    history: list[dict] = []
    last_grad_norm = 0.0
    for epoch in range(1, cfg.epochs + 1):
        order = _epoch_rng(cfg.seed, 1, epoch).permutation(len(y_all))
        drop_rng = _epoch_rng(cfg.seed, 2, epoch)
        losses = []
        for b0 in range(0, len(order), cfg.batch_size):
            idx = order[b0:b0 + cfg.batch_size]
            xb = Tensor(x_all[idx])
            yb = y_all[idx]
            logits = forward(xb, params, model_cfg, train=True, rng=drop_rng)
            loss = ad.cross_entropy_logits(logits, yb, weights)
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                raise TrainingDivergedError(
                    f"non-finite loss {loss_val} at epoch {epoch}, batch {b0 // cfg.batch_size}; "
                    f"last max grad norm {last_grad_norm:.3e}"
                )
            ad.zero_grads(params)
            ad.backward(loss)
            last_grad_norm = max(
                float(np.abs(p.grad).max()) for p in params.values() if p.grad is not None
            )
            ad.adam_step(params, state, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
            losses.append(loss_val)

        record: dict = {"epoch": epoch, "train_loss": float(np.mean(losses)), "val": None}
        if val_set is not None and epoch % cfg.eval_every == 0:
            ck = _snapshot(model_cfg, params, state, epoch, history, cfg)
            report = evaluation.classification_report(ck, val_set, threshold=0.5)
            record["val"] = evaluation.report_to_dict(report)
        history.append(record)

    return _snapshot(model_cfg, params, state, cfg.epochs, history, cfg)


def _snapshot(model_cfg, params, state, epoch, history, cfg) -> Checkpoint:
    return Checkpoint(
        model_config=model_cfg,
        params={k: p.data.copy() for k, p in params.items()},
        adam_m={k: v.copy() for k, v in state.m.items()},
        adam_v={k: v.copy() for k, v in state.v.items()},
        adam_t=state.t,
        epoch=epoch,
        history=list(history),
        train_config=asdict(cfg),
        prompt_text=PROMPT_TEXT if model_cfg.arch == "breakgpt" else None,
    )


def write_history_jsonl(history: Sequence[dict], sink) -> None:
    own = isinstance(sink, (str, Path))
    f = open(sink, "w") if own else sink
    try:
        for rec in history:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    finally:
        if own:
            f.close()


# ---------------------------------------------------------------------------
# checkpoint binary format


MAGIC = b"SRGC"
FORMAT_VERSION = 1
_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAG_FOR = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


def _pack_record(name: str, arr: np.ndarray) -> bytes:
    nb = name.encode("utf-8")
    tag = _TAG_FOR.get(arr.dtype)
    if tag is None:
        raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
    head = struct.pack("<I", len(nb)) + nb + struct.pack("<BB", tag, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr).tobytes()


def save_checkpoint(ckpt: Checkpoint, sink) -> None:
    meta = json.dumps(
        {
            "model_config": asdict(ckpt.model_config),
            "train_config": ckpt.train_config,
            "epoch": ckpt.epoch,
            "adam_t": ckpt.adam_t,
            "history": ckpt.history,
            "prompt_text": ckpt.prompt_text,
        },
        sort_keys=True,
    ).encode("utf-8")

    body = bytearray()
    body += struct.pack("<I", FORMAT_VERSION)
    body += struct.pack("<I", len(meta)) + meta
    body += struct.pack("<I", len(ckpt.params))
    for name in sorted(ckpt.params):
        body += _pack_record(name, ckpt.params[name])
    moments = [("m." + k, v) for k, v in sorted(ckpt.adam_m.items())]
    moments += [("v." + k, v) for k, v in sorted(ckpt.adam_v.items())]
    body += struct.pack("<I", len(moments))
    for name, arr in moments:
        body += _pack_record(name, arr)

    blob = MAGIC + bytes(body) + struct.pack("<I", zlib.crc32(bytes(body)))
    if isinstance(sink, (str, Path)):
        Path(sink).write_bytes(blob)
    else:
        sink.write(blob)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError(
                f"needed {n} bytes at offset {self.pos}, only {len(self.data) - self.pos} left"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return self.take(1)[0]


def _read_record(r: _Reader) -> tuple[str, np.ndarray]:
    name = r.take(r.u32()).decode("utf-8")
    tag = r.u8()
    if tag not in _DTYPE_TAGS:
        raise CheckpointError(f"unknown dtype tag {tag} in record {name!r}")
    dtype = _DTYPE_TAGS[tag]
    rank = r.u8()
    shape = tuple(r.u32() for _ in range(rank))
    count = int(np.prod(shape)) if shape else 1
    raw = r.take(count * dtype.itemsize)
    return name, np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def load_checkpoint(source) -> Checkpoint:
    data = Path(source).read_bytes() if isinstance(source, (str, Path)) else source.read()
    if len(data) < 4:
        raise TruncatedCheckpointError("file shorter than the magic header")
    if data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")

    r = _Reader(data)
    r.pos = 4
    version = r.u32()
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"format version {version} unsupported (have {FORMAT_VERSION})")
    try:
        meta = json.loads(r.take(r.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt metadata block: {exc}") from None

    params: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name, arr = _read_record(r)
        params[name] = arr
    adam_m: dict[str, np.ndarray] = {}
    adam_v: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name, arr = _read_record(r)
        if name.startswith("m."):
            adam_m[name[2:]] = arr
        elif name.startswith("v."):
            adam_v[name[2:]] = arr
        else:
            raise CheckpointError(f"unexpected moment record {name!r}")

    payload_end = r.pos
    stored_crc = r.u32()
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after checksum")
    if zlib.crc32(data[4:payload_end]) != stored_crc:
        raise ChecksumError("payload CRC32 mismatch")

    try:
        model_cfg = ModelConfig(**meta["model_config"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"invalid model config in checkpoint: {exc}") from None
    return Checkpoint(
        model_config=model_cfg,
        params=params,
        adam_m=adam_m,
        adam_v=adam_v,
        adam_t=int(meta.get("adam_t", 0)),
        epoch=int(meta.get("epoch", 0)),
        history=meta.get("history", []),
        train_config=meta.get("train_config"),
        prompt_text=meta.get("prompt_text"),
    )
