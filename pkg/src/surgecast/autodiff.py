"""Minimal dense-tensor reverse-mode automatic differentiation.

Every operation builds a graph node holding a closure that routes the
upstream gradient into its inputs. Gradients accumulate additively, so a
tensor feeding several consumers receives the sum of all contributions.
Float64 is used in the gradient-check tests; model training runs float32.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class AutodiffError(Exception):
    pass


class ShapeError(AutodiffError):
    pass


class GraphReuseError(AutodiffError):
    """Raised when backward() runs twice over the same graph root."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_backward_done")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._backward_done = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def item(self) -> float:
        return float(self.data.reshape(()))


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    tracked = tuple(p for p in parents if p.requires_grad or p._parents)
    if tracked:
        out.requires_grad = True
        out._parents = tracked
        out._backward = backward
    return out


def _accumulate(t: Tensor, g: np.ndarray, owned: bool = False) -> None:
    """Add a gradient contribution; `owned` marks g as a fresh buffer that may
    be adopted without copying (it must not alias any other live gradient)."""
    if t.grad is None:
        if owned and g.dtype == t.data.dtype:
            t.grad = g
        else:
            t.grad = g.astype(t.data.dtype)
    else:
        t.grad += g


def backward(loss: Tensor) -> None:
    """Reverse-topological gradient sweep from a scalar root."""
    if loss.data.size != 1:
        raise ShapeError(f"backward root must be scalar, got shape {loss.data.shape}")
    if loss._backward_done:
        raise GraphReuseError("backward already ran on this graph; rebuild it before differentiating again")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    loss._backward_done = True
    _accumulate(loss, np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# arithmetic


def _shape_suffix_ok(a_shape, b_shape) -> bool:
    return len(b_shape) <= len(a_shape) and a_shape[len(a_shape) - len(b_shape):] == b_shape


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; b may be a trailing-shape broadcast of a."""
    if a.shape != b.shape and not _shape_suffix_ok(a.shape, b.shape):
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")
    lead = len(a.shape) - len(b.shape)

    def grad_fn(g):
        if a.requires_grad or a._parents:
            _accumulate(a, g)
        if b.requires_grad or b._parents:
            if lead:
                _accumulate(b, g.sum(axis=tuple(range(lead))), owned=True)
            else:
                _accumulate(b, g)

    return _node(a.data + b.data, (a, b), grad_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes must match, got {a.shape} and {b.shape}")

    def grad_fn(g):
        if a.requires_grad or a._parents:
            _accumulate(a, g * b.data, owned=True)
        if b.requires_grad or b._parents:
            _accumulate(b, g * a.data, owned=True)

    return _node(a.data * b.data, (a, b), grad_fn)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def grad_fn(g):
        _accumulate(x, g * c, owned=True)

    return _node(x.data * c, (x,), grad_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading batch dimensions on `a` (or both) are allowed."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul operands must have rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims disagree, {a.shape} @ {b.shape}")
    if b.data.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch dims disagree, {a.shape} @ {b.shape}")

    out = a.data @ b.data

    def grad_fn(g):
        if a.requires_grad or a._parents:
            _accumulate(a, g @ np.swapaxes(b.data, -1, -2), owned=True)
        if b.requires_grad or b._parents:
            if b.data.ndim == 2:
                k, n = b.shape
                ga = a.data.reshape(-1, k).T @ g.reshape(-1, n)
                _accumulate(b, ga, owned=True)
            else:
                _accumulate(b, np.swapaxes(a.data, -1, -2) @ g, owned=True)

    return _node(out, (a, b), grad_fn)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fused x @ w + b with b broadcast over leading axes."""
    if x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"affine: incompatible shapes {x.shape} @ {w.shape} + {b.shape}")
    k, n = w.shape

    def grad_fn(g):
        if x.requires_grad or x._parents:
            _accumulate(x, g @ w.data.T, owned=True)
        if w.requires_grad or w._parents:
            _accumulate(w, x.data.reshape(-1, k).T @ g.reshape(-1, n), owned=True)
        if b.requires_grad or b._parents:
            _accumulate(b, g.reshape(-1, n).sum(axis=0), owned=True)

    return _node(x.data @ w.data + b.data, (x, w, b), grad_fn)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(int(i) for i in np.argsort(axes))

    def grad_fn(g):
        _accumulate(x, g.transpose(inverse))

    return _node(x.data.transpose(axes), (x,), grad_fn)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    old = x.shape

    def grad_fn(g):
        _accumulate(x, g.reshape(old))

    return _node(x.data.reshape(shape), (x,), grad_fn)


def concat_time(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate [B, Ta, d] and [B, Tb, d] along the time axis."""
    if a.data.ndim != 3 or b.data.ndim != 3:
        raise ShapeError("concat_time expects rank-3 tensors")
    if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[2]:
        raise ShapeError(f"concat_time: incompatible shapes {a.shape} and {b.shape}")
    ta = a.shape[1]

    def grad_fn(g):
        if a.requires_grad or a._parents:
            _accumulate(a, g[:, :ta])
        if b.requires_grad or b._parents:
            _accumulate(b, g[:, ta:])

    return _node(np.concatenate([a.data, b.data], axis=1), (a, b), grad_fn)


def slice_time(x: Tensor, start: int, stop: int) -> Tensor:
    if x.data.ndim != 3:
        raise ShapeError("slice_time expects a rank-3 tensor")

    def grad_fn(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        _accumulate(x, full, owned=True)

    return _node(x.data[:, start:stop].copy(), (x,), grad_fn)


def expand_batch(x: Tensor, batch: int) -> Tensor:
    """Tile a [T, d] tensor into [batch, T, d]; backward sums over batch."""

    def grad_fn(g):
        _accumulate(x, g.sum(axis=0), owned=True)

    return _node(np.broadcast_to(x.data, (batch,) + x.shape).copy(), (x,), grad_fn)


def mean(x: Tensor, axis: int) -> Tensor:
    n = x.shape[axis]

    def grad_fn(g):
        _accumulate(x, np.repeat(np.expand_dims(g, axis), n, axis=axis) / n, owned=True)

    return _node(x.data.mean(axis=axis), (x,), grad_fn)


def tsum(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar node."""

    def grad_fn(g):
        _accumulate(x, np.full_like(x.data, g.reshape(())), owned=True)

    return _node(np.asarray(x.data.sum()), (x,), grad_fn)


# ---------------------------------------------------------------------------
# nonlinearities


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def silu(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)

    def grad_fn(g):
        _accumulate(x, g * s * (1.0 + x.data * (1.0 - s)), owned=True)

    return _node(x.data * s, (x,), grad_fn)


def relu(x: Tensor) -> Tensor:
    def grad_fn(g):
        _accumulate(x, g * (x.data > 0), owned=True)

    return _node(np.maximum(x.data, 0), (x,), grad_fn)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh form: 0.5*x*(1 + tanh(c*(x + 0.044715*x^3)))."""
    x2 = x.data * x.data
    u = x2 * x.data
    u *= 0.044715
    u += x.data
    u *= _GELU_C
    t = np.tanh(u, out=u)
    out = t + 1.0
    out *= x.data
    out *= 0.5

    def grad_fn(g):
        # d/dx = 0.5*(1+t) + 0.5*x*(1-t^2)*c*(1 + 3*0.044715*x^2)
        du = x2 * (3 * 0.044715 * _GELU_C)
        du += _GELU_C
        d = t * t
        np.subtract(1.0, d, out=d)
        d *= du
        d *= x.data
        d += t
        d += 1.0
        d *= 0.5
        d *= g
        _accumulate(x, d, owned=True)

    return _node(out, (x,), grad_fn)


def softmax(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Max-subtracted softmax over the last axis.

    `mask` is a boolean array broadcastable to x; False positions get exactly
    zero probability. Every row must keep at least one True position.
    """
    vals = x.data
    if mask is not None:
        if not np.broadcast_to(mask, vals.shape).any(axis=-1).all():
            raise ShapeError("softmax: some rows are fully masked")
        vals = np.where(mask, vals, -np.inf)
    m = vals.max(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", over="ignore"):
        e = np.exp(vals - m)
        p = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        dot = (g * p).sum(axis=-1, keepdims=True)
        _accumulate(x, p * (g - dot), owned=True)

    return _node(p, (x,), grad_fn)


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize the last axis, then apply the learned affine map."""
    d = x.shape[-1]
    if d == 0:
        raise ShapeError("layer_norm: zero-length axis")
    if gain.shape != (d,) or shift.shape != (d,):
        raise ShapeError(f"layer_norm: gain/shift must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv

    def grad_fn(g):
        lead = tuple(range(g.ndim - 1))
        if gain.requires_grad or gain._parents:
            _accumulate(gain, (g * xhat).sum(axis=lead), owned=True)
        if shift.requires_grad or shift._parents:
            _accumulate(shift, g.sum(axis=lead), owned=True)
        if x.requires_grad or x._parents:
            gx_hat = g * gain.data
            dvar = (gx_hat * centered).sum(axis=-1, keepdims=True) * (-0.5) * inv**3
            dmu = -(gx_hat * inv).sum(axis=-1, keepdims=True) + dvar * (-2.0 / d) * centered.sum(axis=-1, keepdims=True)
            _accumulate(x, gx_hat * inv + dvar * 2.0 * centered / d + dmu / d, owned=True)

    return _node(xhat * gain.data + shift.data, (x, gain, shift), grad_fn)


def conv1d(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Same-padded cross-correlation over the time axis.

    x: [B, L, C_in], kernel: [ks, C_in, C_out] with ks odd, bias: [C_out].
    Output keeps length L via symmetric zero padding.
    """
    if x.data.ndim != 3 or kernel.data.ndim != 3:
        raise ShapeError("conv1d expects x [B,L,Cin] and kernel [ks,Cin,Cout]")
    ks, c_in, c_out = kernel.shape
    if ks % 2 == 0:
        raise ShapeError(f"conv1d: kernel size must be odd, got {ks}")
    if x.shape[2] != c_in:
        raise ShapeError(f"conv1d: channel mismatch, input has {x.shape[2]}, kernel expects {c_in}")
    if bias.shape != (c_out,):
        raise ShapeError(f"conv1d: bias must have shape ({c_out},)")
    b, length, _ = x.shape
    pad = (ks - 1) // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad), (0, 0)))
    # [B, L, Cin, ks] -> [B*L, ks*Cin] columns, then one GEMM
    win = np.lib.stride_tricks.sliding_window_view(xp, ks, axis=1)
    cols = np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(b * length, ks * c_in)
    k2 = kernel.data.reshape(ks * c_in, c_out)
    out = (cols @ k2 + bias.data).reshape(b, length, c_out)

    def grad_fn(g):
        g2 = g.reshape(b * length, c_out)
        if kernel.requires_grad or kernel._parents:
            _accumulate(kernel, (cols.T @ g2).reshape(ks, c_in, c_out), owned=True)
        if bias.requires_grad or bias._parents:
            _accumulate(bias, g2.sum(axis=0), owned=True)
        if x.requires_grad or x._parents:
            gcols = (g2 @ k2.T).reshape(b, length, ks, c_in)
            gxp = np.zeros_like(xp)
            for j in range(ks):
                gxp[:, j:j + length] += gcols[:, :, j]
            _accumulate(x, gxp[:, pad:pad + length].copy(), owned=True)

    return _node(out, (x, kernel, bias), grad_fn)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None = None, train: bool = False) -> Tensor:
    """Inverted dropout; identity when p == 0 or not training."""
    if p < 0 or p >= 1:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs an explicit rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    keep = keep.astype(x.data.dtype)

    def grad_fn(g):
        _accumulate(x, g * keep, owned=True)

    return _node(x.data * keep, (x,), grad_fn)


def cross_entropy_logits(logits: Tensor, labels: np.ndarray, class_weights: Sequence[float]) -> Tensor:
    """Mean over the batch of w[y] * (-log softmax(logits)[y])."""
    labels = np.asarray(labels)
    if logits.data.ndim != 2:
        raise ShapeError("cross_entropy_logits expects [B, C] logits")
    b, c = logits.shape
    if labels.shape != (b,):
        raise ShapeError(f"labels must have shape ({b},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"labels must lie in [0, {c})")
    w = np.asarray(class_weights, dtype=logits.data.dtype)
    if w.shape != (c,):
        raise ShapeError(f"class_weights must have shape ({c},)")
    if (w <= 0).any():
        raise ValueError("class weights must be positive")

    m = logits.data.max(axis=-1, keepdims=True)
    e = np.exp(logits.data - m)
    p = e / e.sum(axis=-1, keepdims=True)
    logp = (logits.data - m) - np.log(e.sum(axis=-1, keepdims=True))
    wy = w[labels]
    loss = -(wy * logp[np.arange(b), labels]).mean()

    def grad_fn(g):
        onehot = np.zeros_like(p)
        onehot[np.arange(b), labels] = 1.0
        _accumulate(logits, g.reshape(()) * wy[:, None] * (p - onehot) / b, owned=True)

    return _node(np.asarray(loss), (logits,), grad_fn)


# ---------------------------------------------------------------------------
# parameters, init, optimizer


@dataclass
class Parameter:
    name: str
    tensor: Tensor
    init_scheme: str = "uniform_fan_in"


def _name_stream(seed: int, name: str) -> np.random.Generator:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    sub = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, sub]))


def init_uniform(name: str, shape: tuple[int, ...], fan_in: int, seed: int, dtype=np.float32) -> Tensor:
    """Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) draw on a per-name stream.

    The stream is derived from (seed, name), so adding parameters elsewhere
    never shifts this tensor's initialization.
    """
    rng = _name_stream(seed, name)
    limit = 1.0 / np.sqrt(fan_in)
    data = rng.uniform(-limit, limit, size=shape)
    return Tensor(data.astype(dtype), requires_grad=True)


def init_zeros(shape: tuple[int, ...], dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def init_ones(shape: tuple[int, ...], dtype=np.float32) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params: dict[str, Tensor]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
            t=0,
        )


def adam_step(
    params: dict[str, Tensor],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update in place; missing grads count as zero."""
    state.t += 1
    t = state.t
    for name, p in params.items():
        if state.m[name].shape != p.data.shape:
            raise ShapeError(f"adam state/param shape mismatch for {name}")
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        state.m[name] = beta1 * state.m[name] + (1 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1 - beta2) * g * g
        m_hat = state.m[name] / (1 - beta1**t)
        v_hat = state.v[name] / (1 - beta2**t)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


# ---------------------------------------------------------------------------
# finite-difference checking (test utility entry point)


def numeric_gradient(fn: Callable[[], Tensor], x: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar-valued rebuild `fn` w.r.t. x."""
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = fn().item()
        flat[i] = orig - eps
        lo = fn().item()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return grad


def check_gradients(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    rtol: float = 1e-6,
    atol: float = 1e-9,
    eps: float = 1e-5,
) -> float:
    """Compare autodiff grads of fn() against central differences.

    Returns the worst relative error; raises AssertionError past tolerance.
    """
    loss = fn()
    backward(loss)
    worst = 0.0
    for x in inputs:
        assert x.grad is not None, "input received no gradient"
        num = numeric_gradient(fn, x, eps=eps)
        diff = np.abs(x.grad - num)
        ref = np.maximum(np.abs(x.grad), np.abs(num))
        bad = diff > (rtol * ref + atol)
        if bad.any():
            i = int(np.argmax(diff - (rtol * ref + atol)))
            raise AssertionError(
                f"gradient mismatch at flat index {i}: autodiff {x.grad.reshape(-1)[i]!r} "
                f"vs numeric {num.reshape(-1)[i]!r}"
            )
        with np.errstate(invalid="ignore", divide="ignore"):
            rel = np.where(ref > 0, diff / ref, 0.0)
        worst = max(worst, float(rel.max()) if rel.size else 0.0)
    return worst
