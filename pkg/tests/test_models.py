import numpy as np
import pytest

from surgecast import autodiff as ad
from surgecast import models as mm
from surgecast.autodiff import Tensor

TINY = dict(d_model=8, n_heads=2, n_layers=1, ff_dim=16, window=6, prompt_tokens=3)


def tiny_cfg(arch, **over):
    kw = dict(TINY, n_features=4, dropout_p=0.0)
    kw.update(over)
    return mm.ModelConfig(arch=arch, **kw)


def batch_for(cfg, b=2, seed=0, dtype=np.float64):
    rng = np.random.default_rng(seed)
    return Tensor(rng.standard_normal((b, cfg.window, cfg.n_features)).astype(dtype))


# ---------------------------------------------------------------------------
# positional encoding


def test_pe_position_zero():
    enc = mm.positional_encoding(4, 6, dtype=np.float64)
    assert np.allclose(enc[0], [0, 1, 0, 1, 0, 1])


def test_pe_bounded():
    enc = mm.positional_encoding(128, 64)
    assert enc.min() >= -1.0 and enc.max() <= 1.0


def test_pe_first_frequency():
    enc = mm.positional_encoding(2, 8, dtype=np.float64)
    assert enc[1, 0] == pytest.approx(np.sin(1.0), abs=1e-12)
    assert enc[1, 0] == pytest.approx(0.8414709848078965)
    assert enc[1, 1] == pytest.approx(np.cos(1.0), abs=1e-12)


def test_pe_odd_dimension_rejected():
    with pytest.raises(mm.ModelConfigError):
        mm.positional_encoding(4, 7)


# ---------------------------------------------------------------------------
# attention


def hidden_batch(cfg, b=2, t=None, seed=0):
    rng = np.random.default_rng(seed)
    t = cfg.window if t is None else t
    return Tensor(rng.standard_normal((b, t, cfg.d_model)))


def test_attention_singleton_weight():
    cfg = tiny_cfg("simple", window=1)
    params = mm.init_model(cfg, seed=0, dtype=np.float64)
    x = hidden_batch(cfg, b=1, t=1)
    out, w = mm.multi_head_attention(x, params, "block0.attn", cfg.n_heads, return_weights=True)
    assert w.shape == (1, cfg.n_heads, 1, 1)
    assert np.allclose(w, 1.0)
    assert out.shape == (1, 1, cfg.d_model)


def test_attention_rows_sum_to_one():
    cfg = tiny_cfg("simple")
    params = mm.init_model(cfg, seed=1, dtype=np.float64)
    x = hidden_batch(cfg, b=3, seed=2)
    _, w = mm.multi_head_attention(x, params, "block0.attn", cfg.n_heads, return_weights=True)
    assert np.allclose(w.sum(axis=-1), 1.0, atol=1e-6)


def test_causal_mask_blocks_future():
    cfg = tiny_cfg("simple")
    params = mm.init_model(cfg, seed=3, dtype=np.float64)
    x = hidden_batch(cfg, b=1, seed=4)
    base = mm.multi_head_attention(x, params, "block0.attn", cfg.n_heads, causal=True).data
    t = 2
    perturbed = x.data.copy()
    perturbed[:, t + 1:, :] += np.random.default_rng(5).standard_normal(perturbed[:, t + 1:, :].shape)
    out = mm.multi_head_attention(Tensor(perturbed), params, "block0.attn", cfg.n_heads, causal=True).data
    assert np.allclose(out[:, : t + 1], base[:, : t + 1], atol=1e-12)
    assert not np.allclose(out[:, t + 1:], base[:, t + 1:])


# ---------------------------------------------------------------------------
# forward contracts


@pytest.mark.parametrize("arch", mm.ARCHITECTURES)
def test_output_shape(arch):
    cfg = tiny_cfg(arch)
    params = mm.init_model(cfg, seed=5, dtype=np.float64)
    logits = mm.forward(batch_for(cfg, b=4, seed=6), params, cfg)
    assert logits.shape == (4, 2)


def test_breakgpt_default_geometry():
    cfg = mm.ModelConfig(arch="breakgpt", n_features=8)
    params = mm.init_model(cfg, seed=0)
    x = Tensor(np.random.default_rng(0).standard_normal((2, 64, 8)).astype(np.float32))
    assert mm.forward(x, params, cfg).shape == (2, 2)


@pytest.mark.parametrize("arch", mm.ARCHITECTURES)
def test_duplicate_windows_give_identical_rows(arch):
    cfg = tiny_cfg(arch)
    params = mm.init_model(cfg, seed=7, dtype=np.float64)
    row = np.random.default_rng(8).standard_normal((1, cfg.window, cfg.n_features))
    batch = Tensor(np.concatenate([row, row], axis=0))
    logits = mm.forward(batch, params, cfg).data
    assert np.allclose(logits[0], logits[1], atol=1e-12)


def test_zero_params_zero_input_gives_zero_logits():
    cfg = tiny_cfg("simple")
    params = mm.init_model(cfg, seed=9, dtype=np.float64)
    for p in params.values():
        p.data[...] = 0.0
    logits = mm.forward(Tensor(np.zeros((2, cfg.window, cfg.n_features))), params, cfg)
    assert np.array_equal(logits.data, np.zeros((2, 2)))


def test_conv_identity_kernel_reduces_to_silu_of_projection():
    cfg = tiny_cfg("conv")
    params = mm.init_model(cfg, seed=10, dtype=np.float64)
    k = np.zeros((cfg.conv_kernel, cfg.d_model, cfg.d_model))
    k[cfg.conv_kernel // 2] = np.eye(cfg.d_model)
    params["conv.kernel"].data[...] = k
    params["conv.bias"].data[...] = 0.0
    x = batch_for(cfg, b=2, seed=11)
    projected = mm.project_input(x, params)
    branch = mm.conv_feature_branch(projected, params)
    assert np.allclose(branch.data, ad.silu(projected).data, atol=1e-9)


@pytest.mark.parametrize("arch", mm.ARCHITECTURES)
def test_every_parameter_gets_gradient(arch):
    cfg = tiny_cfg(arch, window=8)
    params = mm.init_model(cfg, seed=12, dtype=np.float64)
    x = batch_for(cfg, b=4, seed=13)
    labels = np.array([0, 1, 0, 1])
    loss = ad.cross_entropy_logits(mm.forward(x, params, cfg), labels, [1.0, 1.0])
    ad.backward(loss)
    total = dead = 0
    for name, p in params.items():
        assert p.grad is not None, f"{name} got no gradient"
        total += p.grad.size
        dead += int((p.grad == 0).sum())
    assert dead / total < 0.01


def test_breakgpt_prompt_embeddings_train():
    cfg = tiny_cfg("breakgpt")
    params = mm.init_model(cfg, seed=14, dtype=np.float64)
    x = batch_for(cfg, b=3, seed=15)
    loss = ad.cross_entropy_logits(mm.forward(x, params, cfg), np.array([1, 0, 1]), [1.0, 1.0])
    ad.backward(loss)
    assert params["prompt"].grad is not None
    assert np.abs(params["prompt"].grad).max() > 0


def test_breakgpt_prompt_perturbation_changes_logits():
    # pre-norm blocks erase constant row shifts, so perturb in a random direction
    cfg = tiny_cfg("breakgpt")
    params = mm.init_model(cfg, seed=16, dtype=np.float64)
    x = batch_for(cfg, b=1, seed=17)
    base = mm.forward(x, params, cfg).data.copy()
    params["prompt"].data[1, :] += np.random.default_rng(30).standard_normal(cfg.d_model)
    bumped = mm.forward(x, params, cfg).data
    assert not np.allclose(base, bumped)


def test_breakgpt_positions_after_read_point_are_ignored():
    cfg = tiny_cfg("breakgpt")
    params = mm.init_model(cfg, seed=18, dtype=np.float64)
    b, extra = 1, 3
    rng = np.random.default_rng(19)
    series = Tensor(rng.standard_normal((b, cfg.window, cfg.n_features)))
    read = cfg.prompt_tokens + cfg.window - 1

    def hidden_at_read(dummy_rows):
        seq = ad.concat_time(
            ad.expand_batch(params["prompt"], b), mm.project_input(series, params)
        )
        seq = ad.add(seq, ad.expand_batch(params["wpe"], b))
        seq = ad.concat_time(seq, Tensor(dummy_rows))
        h = mm.gpt_stack(seq, params, cfg, train=False, rng=None)
        return h.data[:, read, :]

    dummies = rng.standard_normal((b, extra, cfg.d_model))
    assert np.allclose(hidden_at_read(dummies), hidden_at_read(dummies + 7.0), atol=1e-12)


def test_breakgpt_depends_on_all_positions():
    cfg = tiny_cfg("breakgpt")
    params = mm.init_model(cfg, seed=20, dtype=np.float64)
    x = batch_for(cfg, b=1, seed=21)
    rng = np.random.default_rng(22)
    base = mm.forward(x, params, cfg).data.copy()
    for t in range(cfg.window):
        bumped = x.data.copy()
        bumped[0, t, :] += rng.standard_normal(cfg.n_features)
        out = mm.forward(Tensor(bumped), params, cfg).data
        assert not np.allclose(out, base), f"series position {t} ignored"
    for p in range(cfg.prompt_tokens):
        saved = params["prompt"].data.copy()
        params["prompt"].data[p, :] += rng.standard_normal(cfg.d_model)
        out = mm.forward(x, params, cfg).data
        params["prompt"].data[...] = saved
        assert not np.allclose(out, base), f"prompt row {p} ignored"


# ---------------------------------------------------------------------------
# init


def test_init_deterministic():
    cfg = tiny_cfg("conv")
    a = mm.init_model(cfg, seed=42)
    b = mm.init_model(cfg, seed=42)
    assert a.keys() == b.keys()
    for k in a:
        assert np.array_equal(a[k].data, b[k].data)


def test_init_seed_sensitivity():
    cfg = tiny_cfg("simple")
    a = mm.init_model(cfg, seed=1)
    b = mm.init_model(cfg, seed=2)
    assert any(not np.array_equal(a[k].data, b[k].data) for k in a)


@pytest.mark.parametrize("arch", mm.ARCHITECTURES)
def test_parameter_count_closed_form(arch):
    cfg = mm.ModelConfig(arch=arch, n_features=8)
    params = mm.init_model(cfg, seed=0)
    d, ff, L = cfg.d_model, cfg.ff_dim, cfg.n_layers
    block = 4 * (d * d + d) + 2 * (2 * d) + (d * ff + ff) + (ff * d + d)
    expected = (cfg.n_features * d + d) + L * block + (d * 2 + 2)
    if arch == "conv":
        expected += cfg.conv_kernel * d * d + d
    if arch == "breakgpt":
        expected += cfg.prompt_tokens * d + (cfg.prompt_tokens + cfg.window) * d + 2 * d
    else:
        expected += 2 * d  # closing layer norm of the encoder stack
    assert mm.parameter_count(params) == expected


def test_config_validation():
    with pytest.raises(mm.ModelConfigError):
        mm.ModelConfig(arch="simple", n_features=4, d_model=10, n_heads=4)
    with pytest.raises(mm.ModelConfigError):
        mm.ModelConfig(arch="conv", n_features=4, conv_kernel=4)
    with pytest.raises(mm.ModelConfigError):
        mm.ModelConfig(arch="lstm", n_features=4)


def test_config_json_round_trip():
    cfg = mm.ModelConfig(arch="breakgpt", n_features=8, d_model=32, n_heads=2)
    assert mm.ModelConfig.from_json(cfg.to_json()) == cfg


# ---------------------------------------------------------------------------
# numerical invariants


@pytest.mark.parametrize("arch", mm.ARCHITECTURES)
def test_batch_invariance(arch):
    cfg = tiny_cfg(arch)
    params = mm.init_model(cfg, seed=23, dtype=np.float64)
    x = batch_for(cfg, b=5, seed=24)
    together = mm.forward(x, params, cfg).data
    for i in range(5):
        alone = mm.forward(Tensor(x.data[i:i + 1]), params, cfg).data
        assert np.allclose(alone[0], together[i], atol=1e-6)


@pytest.mark.parametrize("arch", mm.ARCHITECTURES)
def test_forward_is_pure(arch):
    cfg = tiny_cfg(arch)
    params = mm.init_model(cfg, seed=25)
    x = Tensor(np.random.default_rng(26).standard_normal((2, cfg.window, cfg.n_features)).astype(np.float32))
    a = mm.forward(x, params, cfg).data
    b = mm.forward(x, params, cfg).data
    assert np.array_equal(a, b)


@pytest.mark.parametrize("arch", mm.ARCHITECTURES)
def test_model_gradients_vs_finite_differences(arch):
    cfg = tiny_cfg(arch, window=5)
    params = mm.init_model(cfg, seed=27, dtype=np.float64)
    rng = np.random.default_rng(28)
    x = Tensor(rng.standard_normal((2, cfg.window, cfg.n_features)))
    labels = np.array([0, 1])

    def loss():
        return ad.cross_entropy_logits(mm.forward(x, params, cfg), labels, [1.0, 2.0])

    base = loss()
    ad.backward(base)
    for name in ("proj.w", "head.w", "block0.attn.wq.w", "block0.ff.w1.b"):
        p = params[name]
        flat = p.data.reshape(-1)
        gflat = p.grad.reshape(-1)
        for idx in rng.choice(flat.size, size=min(4, flat.size), replace=False):
            orig = flat[idx]
            flat[idx] = orig + 1e-5
            hi = loss().item()
            flat[idx] = orig - 1e-5
            lo = loss().item()
            flat[idx] = orig
            num = (hi - lo) / 2e-5
            assert gflat[idx] == pytest.approx(num, rel=1e-4, abs=1e-8), name
