import numpy as np
import pytest

from rosa.errors import ConfigurationError, InputError
from rosa.symbolizer import layer_norm
from rosa.tinymodel import (
    Adam,
    ModelConfig,
    TinyModel,
    cosine_lr,
    silu,
    train_step,
)


def small_cfg(mode="window_only", **kw):
    base = dict(dim=16, vocab=12, layers=2, heads=2, window=4, route_bits=4, seed=3)
    base.update(kw)
    return ModelConfig(mode=mode, **base)


def sample_batch(rng, vocab=12, batch=2, steps=20, n_targets=4):
    tokens = rng.integers(0, vocab, size=(batch, steps))
    targets = np.full((batch, steps), -1)
    targets[:, -n_targets:] = rng.integers(0, vocab, size=(batch, n_targets))
    return tokens, targets


def clone_shared(src: TinyModel, dst: TinyModel) -> None:
    for name in dst.params:
        dst.params[name][...] = src.params[name]


# --- configuration --------------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigurationError):
        ModelConfig(dim=16, vocab=8, heads=3).check()
    with pytest.raises(ConfigurationError):
        ModelConfig(dim=16, vocab=8, window=0).check()
    with pytest.raises(ConfigurationError):
        ModelConfig(dim=16, vocab=8, mode="nope").check()
    with pytest.raises(ConfigurationError):
        ModelConfig(dim=16, vocab=8, route_bits=5, mode="post_attn").check()
    # route width is irrelevant without the retrieval branch
    ModelConfig(dim=16, vocab=8, route_bits=5, mode="global").check()


def test_token_range_checked():
    m = TinyModel(small_cfg())
    with pytest.raises(InputError):
        m.forward(np.array([[0, 99]]))


# --- attention ------------------------------------------------------------

def test_window_one_attends_to_self_only():
    m = TinyModel(small_cfg(window=1))
    rng = np.random.default_rng(0)
    tokens = rng.integers(0, 12, size=(1, 9))
    _, cache = m.forward(tokens)
    blk = cache["blocks"][0]
    u1 = layer_norm(blk["h_in"], m.params["b0.ln1"])
    expected = (u1 @ m.params["b0.wv"]) @ m.params["b0.wo"]
    attn_out = blk["h1"] - blk["h_in"]
    np.testing.assert_allclose(attn_out, expected, atol=1e-12)


def test_window_covering_history_equals_global():
    rng = np.random.default_rng(1)
    tokens = rng.integers(0, 12, size=(2, 16))
    w = TinyModel(small_cfg(window=16))
    g = TinyModel(small_cfg(mode="global", window=16))
    clone_shared(w, g)
    np.testing.assert_array_equal(w.forward(tokens)[0], g.forward(tokens)[0])


def test_uniform_scores_give_windowed_mean():
    m = TinyModel(small_cfg(window=4, layers=1))
    m.params["b0.wq"][...] = 0.0  # all scores equal -> uniform in-window weights
    rng = np.random.default_rng(2)
    tokens = rng.integers(0, 12, size=(1, 10))
    _, cache = m.forward(tokens)
    blk = cache["blocks"][0]
    u1 = layer_norm(blk["h_in"], m.params["b0.ln1"])
    v = u1 @ m.params["b0.wv"]
    steps = tokens.shape[1]
    mean = np.stack(
        [v[0, max(0, t - 3) : t + 1].mean(axis=0) for t in range(steps)]
    )[None]
    expected = mean @ m.params["b0.wo"]
    np.testing.assert_allclose(blk["h1"] - blk["h_in"], expected, atol=1e-12)


def reference_forward(model: TinyModel, tokens):
    """Straight-line per-position recomputation of the window_only path."""
    p = model.params
    cfg = model.config
    c, nh = cfg.dim, cfg.heads
    hd = c // nh
    h = p["embed"][tokens]
    batch, steps = tokens.shape
    for i in range(cfg.layers):
        u1 = layer_norm(h, p[f"b{i}.ln1"])
        a = np.zeros_like(h)
        for b in range(batch):
            q = u1[b] @ p[f"b{i}.wq"]
            k = u1[b] @ p[f"b{i}.wk"]
            v = u1[b] @ p[f"b{i}.wv"]
            for t in range(steps):
                lo = max(0, t - cfg.window + 1)
                ctx = np.zeros(c)
                for head in range(nh):
                    cols = slice(head * hd, (head + 1) * hd)
                    s = k[lo : t + 1, cols] @ q[t, cols] / np.sqrt(hd)
                    w = np.exp(s - s.max())
                    w /= w.sum()
                    ctx[cols] = w @ v[lo : t + 1, cols]
                a[b, t] = ctx @ p[f"b{i}.wo"]
        h1 = h + a
        u2 = layer_norm(h1, p[f"b{i}.ln2"])
        h = h1 + silu(u2 @ p[f"b{i}.mlp_in"]) @ p[f"b{i}.mlp_out"]
    return layer_norm(h, p["ln_f"]) @ p["head"]


def test_forward_matches_straight_line_reference():
    rng = np.random.default_rng(3)
    tokens = rng.integers(0, 12, size=(2, 14))
    m = TinyModel(small_cfg(window=5))
    logits, _ = m.forward(tokens)
    np.testing.assert_allclose(logits, reference_forward(m, tokens), atol=1e-10)


# --- fusion transparency --------------------------------------------------

@pytest.mark.parametrize("seed", range(20))
def test_zero_init_fusion_is_transparent(seed):
    rng = np.random.default_rng(1000 + seed)
    tokens = rng.integers(0, 12, size=(2, 24))
    fused = TinyModel(small_cfg(mode="post_attn", seed=seed))
    plain = TinyModel(small_cfg(seed=seed))
    clone_shared(fused, plain)
    diff = np.abs(fused.forward(tokens)[0] - plain.forward(tokens)[0]).max()
    assert diff <= 1e-12


def test_pre_attn_uniform_gate_is_nearly_transparent_at_init():
    # inj = 0 and a constant gate leave the LN input parallel to h; the LN
    # epsilon breaks exact scale invariance, so only near-transparency holds
    rng = np.random.default_rng(9)
    tokens = rng.integers(0, 12, size=(2, 24))
    fused = TinyModel(small_cfg(mode="pre_attn", seed=4))
    plain = TinyModel(small_cfg(seed=4))
    clone_shared(fused, plain)
    diff = np.abs(fused.forward(tokens)[0] - plain.forward(tokens)[0]).max()
    assert diff <= 1e-2
    assert diff > 0.0


def test_zero_mlp_is_identity():
    m = TinyModel(small_cfg(layers=1))
    m.params["b0.mlp_out"][...] = 0.0
    tokens = np.arange(8).reshape(1, 8)
    _, cache = m.forward(tokens)
    np.testing.assert_array_equal(cache["h_final"], cache["blocks"][0]["h1"])


# --- gradients ------------------------------------------------------------

@pytest.mark.parametrize("mode", ["window_only", "global", "post_attn", "pre_attn"])
def test_full_model_finite_differences(mode):
    rng = np.random.default_rng(42)
    cfg = small_cfg(mode=mode, dim=16, window=5)
    model = TinyModel(cfg)
    tokens, targets = sample_batch(rng, steps=16)

    frozen = None
    if cfg.uses_retrieval:
        _, cache = model.forward(tokens)
        frozen = [
            (blk["rosa"]["out"], blk["rosa"]["v_syms"]) for blk in cache["blocks"]
        ]

    def loss_fn():
        logits, _ = model.forward(tokens, frozen_retrieval=frozen)
        return model.loss(logits, targets)[0]

    loss, grads, _ = model.loss_and_grads(
        tokens, targets, include_surrogate=False, frozen_retrieval=frozen
    )
    eps = 1e-5
    for name, arr in model.params.items():
        flat = arr.reshape(-1)
        picks = rng.choice(flat.size, size=min(5, flat.size), replace=False)
        for idx in picks:
            orig = flat[idx]
            flat[idx] = orig + eps
            up = loss_fn()
            flat[idx] = orig - eps
            down = loss_fn()
            flat[idx] = orig
            fd = (up - down) / (2 * eps)
            an = grads[name].reshape(-1)[idx]
            denom = max(abs(fd), abs(an), 1e-8)
            assert abs(fd - an) / denom <= 1e-3, (name, idx, fd, an)


def test_gradient_accumulation_linearity():
    rng = np.random.default_rng(7)
    model = TinyModel(small_cfg(mode="post_attn"))
    tokens, targets = sample_batch(rng, batch=4)
    loss_full, grads_full, _ = model.loss_and_grads(tokens, targets)
    half_losses = []
    acc = {k: np.zeros_like(v) for k, v in grads_full.items()}
    for sl in (slice(0, 2), slice(2, 4)):
        l, g, _ = model.loss_and_grads(tokens[sl], targets[sl])
        half_losses.append(l)
        for k in acc:
            acc[k] += 0.5 * g[k]
    np.testing.assert_allclose(np.mean(half_losses), loss_full, atol=1e-10)
    for k in acc:
        np.testing.assert_allclose(acc[k], grads_full[k], atol=1e-10)


# --- optimizer and training loop ------------------------------------------

def test_zero_learning_rate_is_noop():
    rng = np.random.default_rng(8)
    model = TinyModel(small_cfg(mode="post_attn"))
    opt = Adam(model, lr=0.0)
    before = {k: v.copy() for k, v in model.params.items()}
    tokens, targets = sample_batch(rng)
    train_step(model, opt, tokens, targets)
    for k, v in model.params.items():
        np.testing.assert_array_equal(v, before[k])


def test_cosine_schedule_endpoints():
    assert cosine_lr(0, 100) == pytest.approx(3e-4)
    assert cosine_lr(99, 100) == pytest.approx(3e-5)
    assert cosine_lr(0, 1) == pytest.approx(3e-4)


def test_single_sequence_overfit():
    rng = np.random.default_rng(11)
    model = TinyModel(small_cfg(mode="post_attn", dim=32, vocab=16), dtype=np.float64)
    opt = Adam(model, lr=3e-3)
    tokens = rng.integers(0, 16, size=(1, 24))
    targets = np.full((1, 24), -1)
    targets[0, -6:] = rng.integers(0, 16, size=6)
    loss = np.inf
    for step in range(500):
        loss = train_step(model, opt, tokens, targets)
        if loss < 0.01:
            break
    assert loss < 0.01, loss


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(12)
    model = TinyModel(small_cfg(mode="post_attn"), dtype=np.float32)
    tokens, targets = sample_batch(rng)
    opt = Adam(model, lr=1e-3)
    train_step(model, opt, tokens, targets)
    logits, _ = model.forward(tokens)
    model.save(tmp_path / "ckpt")
    fresh = TinyModel(small_cfg(mode="post_attn", seed=99), dtype=np.float32)
    fresh.load(tmp_path / "ckpt")
    np.testing.assert_array_equal(fresh.forward(tokens)[0], logits)


def test_checkpoint_shape_mismatch_rejected(tmp_path):
    model = TinyModel(small_cfg(mode="post_attn"))
    model.save(tmp_path / "ckpt")
    other = TinyModel(small_cfg(mode="post_attn", dim=32))
    with pytest.raises(InputError):
        other.load(tmp_path / "ckpt")


class TestBandedAttention:
    """The windowed path that scores only in-window offsets must match the
    dense masked path exactly, forward and backward."""

    def _pair(self, seed=0):
        cfg = ModelConfig(dim=32, vocab=20, layers=2, heads=2, window=6,
                          mode="window_only", seed=seed)
        model = TinyModel(cfg, dtype=np.float64)
        rng = np.random.default_rng(seed + 1)
        tokens = rng.integers(0, 20, size=(3, 24))
        targets = np.where(rng.random((3, 24)) < 0.3, tokens, -1)
        return model, tokens, targets

    def test_forward_matches_dense_mask(self):
        model, tokens, _ = self._pair()
        logits, _ = model.forward(tokens)
        try:
            model._use_banded = lambda steps: False
            dense, _ = model.forward(tokens)
        finally:
            del model._use_banded
        np.testing.assert_allclose(logits, dense, rtol=0, atol=1e-12)

    def test_gradients_match_dense_mask(self):
        model, tokens, targets = self._pair(seed=2)
        logits, cache = model.forward(tokens)
        _, g_logits = model.loss(logits, targets)
        grads = model.backward(g_logits, cache)
        try:
            model._use_banded = lambda steps: False
            logits_d, cache_d = model.forward(tokens)
            _, g_logits_d = model.loss(logits_d, targets)
            grads_d = model.backward(g_logits_d, cache_d)
        finally:
            del model._use_banded
        for name in grads:
            np.testing.assert_allclose(grads[name], grads_d[name], rtol=0, atol=1e-10)
