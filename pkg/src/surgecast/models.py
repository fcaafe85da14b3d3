"""The three uptrend classifiers, written over the autodiff engine.

simple   - input projection, sinusoidal positions, post-norm encoder stack,
           mean pool over time, two-logit head.
conv     - same, with a silu conv branch added residually after projection.
breakgpt - learnable prompt rows prepended to the projected series, learned
           positions, pre-norm causal blocks with GELU feed-forward, head on
           the final series position.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

ARCHITECTURES = ("simple", "conv", "breakgpt")

PROMPT_TEXT = (
    "Predict if the current sequence signals the start of a sharp upward movement at the end."
)


class ModelConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    arch: str
    n_features: int
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    ff_dim: int = 256
    conv_kernel: int = 3
    prompt_tokens: int = 16
    window: int = 64
    dropout_p: float = 0.1
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ModelConfigError(f"unknown arch {self.arch!r}; valid: {', '.join(ARCHITECTURES)}")
        if self.d_model % self.n_heads != 0:
            raise ModelConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.conv_kernel % 2 == 0:
            raise ModelConfigError(f"conv_kernel must be odd, got {self.conv_kernel}")
        for name in ("n_features", "d_model", "n_heads", "n_layers", "ff_dim", "prompt_tokens", "window"):
            if getattr(self, name) < 1:
                raise ModelConfigError(f"{name} must be positive")
        if not (0 <= self.dropout_p < 1):
            raise ModelConfigError("dropout_p must be in [0, 1)")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls(**json.loads(text))


@dataclass
class PromptBlock:
    embeddings: Tensor  # [P, d_model], learnable
    text: str = PROMPT_TEXT


def positional_encoding(length: int, d: int, dtype=np.float32) -> np.ndarray:
    """Sinusoidal positions: sin on even columns, cos on odd, shared frequency."""
    if d % 2 != 0:
        raise ModelConfigError(f"positional encoding needs even d, got {d}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(d // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2 * i / d)
    enc = np.empty((length, d))
    enc[:, 0::2] = np.sin(angle)
    enc[:, 1::2] = np.cos(angle)
    return enc.astype(dtype)


# ---------------------------------------------------------------------------
# initialization


def _linear(params: dict[str, Tensor], name: str, n_in: int, n_out: int, seed: int, dtype) -> None:
    params[f"{name}.w"] = ad.init_uniform(f"{name}.w", (n_in, n_out), fan_in=n_in, seed=seed, dtype=dtype)
    params[f"{name}.b"] = ad.init_zeros((n_out,), dtype=dtype)


def _layer_norm_params(params: dict[str, Tensor], name: str, d: int, dtype) -> None:
    params[f"{name}.gain"] = ad.init_ones((d,), dtype=dtype)
    params[f"{name}.shift"] = ad.init_zeros((d,), dtype=dtype)


def _block_params(params: dict[str, Tensor], prefix: str, cfg: ModelConfig, seed: int, dtype) -> None:
    d, ff = cfg.d_model, cfg.ff_dim
    for proj in ("wq", "wk", "wv", "wo"):
        _linear(params, f"{prefix}.attn.{proj}", d, d, seed, dtype)
    _layer_norm_params(params, f"{prefix}.ln1", d, dtype)
    _layer_norm_params(params, f"{prefix}.ln2", d, dtype)
    _linear(params, f"{prefix}.ff.w1", d, ff, seed, dtype)
    _linear(params, f"{prefix}.ff.w2", ff, d, seed, dtype)


def init_model(cfg: ModelConfig, seed: int, dtype=np.float32) -> dict[str, Tensor]:
    """Deterministic per-path initialization of every parameter tensor."""
    params: dict[str, Tensor] = {}
    _linear(params, "proj", cfg.n_features, cfg.d_model, seed, dtype)
    if cfg.arch == "conv":
        params["conv.kernel"] = ad.init_uniform(
            "conv.kernel", (cfg.conv_kernel, cfg.d_model, cfg.d_model),
            fan_in=cfg.conv_kernel * cfg.d_model, seed=seed, dtype=dtype,
        )
        params["conv.bias"] = ad.init_zeros((cfg.d_model,), dtype=dtype)
    if cfg.arch == "breakgpt":
        params["prompt"] = ad.init_uniform(
            "prompt", (cfg.prompt_tokens, cfg.d_model), fan_in=cfg.d_model, seed=seed, dtype=dtype
        )
        params["wpe"] = ad.init_uniform(
            "wpe", (cfg.prompt_tokens + cfg.window, cfg.d_model), fan_in=cfg.d_model, seed=seed, dtype=dtype
        )
        _layer_norm_params(params, "ln_f", cfg.d_model, dtype)
    else:
        _layer_norm_params(params, "ln_out", cfg.d_model, dtype)
    for layer in range(cfg.n_layers):
        _block_params(params, f"block{layer}", cfg, seed, dtype)
    _linear(params, "head", cfg.d_model, 2, seed, dtype)
    return params


def parameter_count(params: dict[str, Tensor]) -> int:
    return sum(int(np.prod(p.shape)) for p in params.values())


# ---------------------------------------------------------------------------
# forward pieces


def _affine(x: Tensor, params: dict[str, Tensor], name: str) -> Tensor:
    return ad.affine(x, params[f"{name}.w"], params[f"{name}.b"])


def multi_head_attention(
    x: Tensor,
    params: dict[str, Tensor],
    prefix: str,
    n_heads: int,
    causal: bool = False,
    return_weights: bool = False,
):
    """Scaled dot-product attention over [B, T, d] with optional causal mask."""
    b, t, d = x.shape
    if d % n_heads != 0:
        raise ModelConfigError(f"model dim {d} not divisible by {n_heads} heads")
    dh = d // n_heads

    def heads(z: Tensor) -> Tensor:
        return ad.transpose(ad.reshape(z, (b, t, n_heads, dh)), (0, 2, 1, 3))

    q = heads(_affine(x, params, f"{prefix}.wq"))
    k = heads(_affine(x, params, f"{prefix}.wk"))
    v = heads(_affine(x, params, f"{prefix}.wv"))

    scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    mask = np.tril(np.ones((t, t), dtype=bool)) if causal else None
    weights = ad.softmax(scores, mask=mask)
    mixed = ad.matmul(weights, v)  # [B, H, T, dh]
    merged = ad.reshape(ad.transpose(mixed, (0, 2, 1, 3)), (b, t, d))
    out = _affine(merged, params, f"{prefix}.wo")
    if return_weights:
        return out, weights.data
    return out


def encoder_block(x, params, prefix, cfg, train, rng):
    """Pre-norm encoder block: attention and relu feed-forward with residuals."""
    h = ad.layer_norm(x, params[f"{prefix}.ln1.gain"], params[f"{prefix}.ln1.shift"], cfg.ln_eps)
    a = multi_head_attention(h, params, f"{prefix}.attn", cfg.n_heads)
    x = ad.add(x, ad.dropout(a, cfg.dropout_p, rng=rng, train=train))
    h = ad.layer_norm(x, params[f"{prefix}.ln2.gain"], params[f"{prefix}.ln2.shift"], cfg.ln_eps)
    f = _affine(ad.relu(_affine(h, params, f"{prefix}.ff.w1")), params, f"{prefix}.ff.w2")
    return ad.add(x, ad.dropout(f, cfg.dropout_p, rng=rng, train=train))


def gpt_block(x, params, prefix, cfg, train, rng):
    """Pre-norm causal block with GELU feed-forward, GPT-2 geometry."""
    h = ad.layer_norm(x, params[f"{prefix}.ln1.gain"], params[f"{prefix}.ln1.shift"], cfg.ln_eps)
    a = multi_head_attention(h, params, f"{prefix}.attn", cfg.n_heads, causal=True)
    x = ad.add(x, ad.dropout(a, cfg.dropout_p, rng=rng, train=train))
    h = ad.layer_norm(x, params[f"{prefix}.ln2.gain"], params[f"{prefix}.ln2.shift"], cfg.ln_eps)
    f = _affine(ad.gelu(_affine(h, params, f"{prefix}.ff.w1")), params, f"{prefix}.ff.w2")
    return ad.add(x, ad.dropout(f, cfg.dropout_p, rng=rng, train=train))


def encoder_stack(x, params, cfg, train, rng):
    for layer in range(cfg.n_layers):
        x = encoder_block(x, params, f"block{layer}", cfg, train, rng)
    return ad.layer_norm(x, params["ln_out.gain"], params["ln_out.shift"], cfg.ln_eps)


def gpt_stack(x, params, cfg, train, rng):
    for layer in range(cfg.n_layers):
        x = gpt_block(x, params, f"block{layer}", cfg, train, rng)
    return ad.layer_norm(x, params["ln_f.gain"], params["ln_f.shift"], cfg.ln_eps)


def project_input(batch: Tensor, params: dict[str, Tensor]) -> Tensor:
    return _affine(batch, params, "proj")


def conv_feature_branch(projected: Tensor, params: dict[str, Tensor]) -> Tensor:
    """silu(conv(projection)) - the residual branch added back onto the projection."""
    return ad.silu(ad.conv1d(projected, params["conv.kernel"], params["conv.bias"]))


def _check_batch(batch: Tensor, cfg: ModelConfig) -> None:
    if batch.data.ndim != 3 or batch.shape[1] != cfg.window or batch.shape[2] != cfg.n_features:
        raise ModelConfigError(
            f"batch shape {batch.shape} does not match (B, {cfg.window}, {cfg.n_features})"
        )


def simple_transformer_forward(batch, params, cfg, train=False, rng=None):
    _check_batch(batch, cfg)
    h = project_input(batch, params)
    h = ad.add(h, Tensor(positional_encoding(cfg.window, cfg.d_model, dtype=h.data.dtype)))
    h = encoder_stack(h, params, cfg, train, rng)
    pooled = ad.mean(h, axis=1)
    return _affine(pooled, params, "head")


def conv_transformer_forward(batch, params, cfg, train=False, rng=None):
    _check_batch(batch, cfg)
    p = project_input(batch, params)
    h = ad.add(p, conv_feature_branch(p, params))
    h = ad.add(h, Tensor(positional_encoding(cfg.window, cfg.d_model, dtype=h.data.dtype)))
    h = encoder_stack(h, params, cfg, train, rng)
    pooled = ad.mean(h, axis=1)
    return _affine(pooled, params, "head")


def breakgpt_forward(batch, params, cfg, train=False, rng=None):
    _check_batch(batch, cfg)
    b = batch.shape[0]
    series = project_input(batch, params)
    prompt = ad.expand_batch(params["prompt"], b)
    seq = ad.concat_time(prompt, series)  # prompt first, series after
    seq = ad.add(seq, ad.expand_batch(params["wpe"], b))
    h = gpt_stack(seq, params, cfg, train, rng)
    last = ad.reshape(
        ad.slice_time(h, cfg.prompt_tokens + cfg.window - 1, cfg.prompt_tokens + cfg.window),
        (b, cfg.d_model),
    )
    return _affine(last, params, "head")


_FORWARDS = {
    "simple": simple_transformer_forward,
    "conv": conv_transformer_forward,
    "breakgpt": breakgpt_forward,
}


def forward(batch, params, cfg, train=False, rng=None):
    return _FORWARDS[cfg.arch](batch, params, cfg, train=train, rng=rng)


def predict_logits(x: np.ndarray, params: dict[str, Tensor], cfg: ModelConfig, batch_size: int = 256) -> np.ndarray:
    """Evaluation-mode logits over an [N, L, F] array, batched."""
    outs = []
    dtype = next(iter(params.values())).data.dtype
    for i in range(0, len(x), batch_size):
        chunk = Tensor(np.ascontiguousarray(x[i:i + batch_size], dtype=dtype))
        outs.append(forward(chunk, params, cfg, train=False).data)
    return np.concatenate(outs, axis=0)


def prompt_block(params: dict[str, Tensor]) -> PromptBlock:
    return PromptBlock(embeddings=params["prompt"])
