"""Minimal windowed-attention decoder with a retrieval side-branch.

Everything is plain numpy with a hand-written backward pass, which keeps the
retrieval surrogate gradients and the exact gradients in one place and makes
finite-difference verification straightforward. Blocks are pre-norm residual:
attention (optionally fused with the retrieval read-out) followed by a SiLU
MLP.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backward import (
    backprop_adapters,
    backprop_gate,
    backprop_head,
    backward_key,
    backward_query,
    backward_value,
    layer_norm_backward,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigurationError, InputError
from .injection import (
    InjectionParams,
    gather_values,
    inject_forward,
    mix_pre_attn,
    sigmoid,
)
from .retrieval import batch_retrieve
from .symbolizer import AdapterParams, layer_norm, pack_bits, project_and_binarize

MODES = ("post_attn", "pre_attn", "window_only", "global")
NEG_INF = -1e30


@dataclass
class ModelConfig:
    dim: int
    vocab: int
    layers: int = 2
    heads: int = 2
    window: int = 32
    route_bits: int = 4
    mode: str = "post_attn"
    seed: int = 0
    mlp_ratio: int = 4
    alpha0_init: float = -6.0

    def check(self) -> None:
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown fusion mode {self.mode!r}")
        if self.dim % self.heads:
            raise ConfigurationError("dim must be divisible by heads")
        if self.window < 1:
            raise ConfigurationError("window must be >= 1")
        if self.mode in ("post_attn", "pre_attn") and self.dim % self.route_bits:
            raise ConfigurationError("route_bits must divide dim")

    @property
    def uses_retrieval(self) -> bool:
        return self.mode in ("post_attn", "pre_attn")


def silu(x):
    return x * sigmoid(x)


def silu_grad(x):
    s = sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


def softmax_lastaxis(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class TinyModel:
    """Decoder-only model; parameters live in a flat name -> array dict."""

    def __init__(self, config: ModelConfig, dtype=np.float64):
        config.check()
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(config.seed)
        c, v = config.dim, config.vocab
        hidden = config.mlp_ratio * c
        s = 1.0 / np.sqrt(c)
        p: dict[str, np.ndarray] = {}
        # unit-scale embeddings with damped residual branches keep the
        # current token dominant in early hidden states
        p["embed"] = s * rng.standard_normal((v, c))
        p["head"] = s * rng.standard_normal((c, v))
        p["ln_f"] = np.ones(c)
        for i in range(config.layers):
            p[f"b{i}.ln1"] = np.ones(c)
            p[f"b{i}.ln2"] = np.ones(c)
            for name in ("wq", "wk", "wv"):
                p[f"b{i}.{name}"] = s * rng.standard_normal((c, c))
            p[f"b{i}.wo"] = 0.1 * s * rng.standard_normal((c, c))
            p[f"b{i}.mlp_in"] = s * rng.standard_normal((c, hidden))
            p[f"b{i}.mlp_out"] = 0.1 * rng.standard_normal((hidden, c)) / np.sqrt(hidden)
            if config.uses_retrieval:
                # independent draws: identical q/k adapters would make every
                # query self-match its own run and retrieval would never fire
                p[f"b{i}.ad_ln"] = np.ones(c)
                for name in ("ad_q", "ad_k", "ad_v"):
                    p[f"b{i}.{name}"] = s * rng.standard_normal((c, c))
                p[f"b{i}.e0"] = np.zeros(c)
                p[f"b{i}.e1"] = np.zeros(c)
                p[f"b{i}.w_out"] = np.eye(c)
                if config.mode == "pre_attn":
                    p[f"b{i}.alpha0"] = np.full(c, config.alpha0_init)
        self.params = {k: np.ascontiguousarray(a, dtype=self.dtype) for k, a in p.items()}

    # -- parameter plumbing ------------------------------------------------

    def parameter_names(self) -> list[str]:
        return list(self.params)

    def save(self, path) -> None:
        save_checkpoint(path, self.params)

    def load(self, path) -> None:
        loaded = load_checkpoint(path)
        for name, arr in self.params.items():
            if name not in loaded or loaded[name].shape != arr.shape:
                raise InputError(f"checkpoint missing or mismatched {name!r}")
            arr[...] = loaded[name].astype(self.dtype)

    def _adapters(self, i: int) -> AdapterParams:
        p = self.params
        return AdapterParams(
            w_q=p[f"b{i}.ad_q"], w_k=p[f"b{i}.ad_k"], w_v=p[f"b{i}.ad_v"],
            ln_scale=p[f"b{i}.ad_ln"],
        )

    def _injection(self, i: int) -> InjectionParams:
        p = self.params
        alpha0 = p.get(f"b{i}.alpha0")
        if alpha0 is None:
            alpha0 = np.zeros(self.config.dim, dtype=self.dtype)
        return InjectionParams(
            e0=p[f"b{i}.e0"], e1=p[f"b{i}.e1"], w_out=p[f"b{i}.w_out"], alpha0=alpha0,
        )

    # -- forward -----------------------------------------------------------

    def _use_banded(self, steps: int) -> bool:
        return self.config.mode != "global" and self.config.window < steps

    def _attention(self, u: np.ndarray, i: int):
        cfg = self.config
        p = self.params
        batch, steps, c = u.shape
        nh, hd = cfg.heads, c // cfg.heads
        q = (u @ p[f"b{i}.wq"]).reshape(batch, steps, nh, hd).transpose(0, 2, 1, 3)
        k = (u @ p[f"b{i}.wk"]).reshape(batch, steps, nh, hd).transpose(0, 2, 1, 3)
        v = (u @ p[f"b{i}.wv"]).reshape(batch, steps, nh, hd).transpose(0, 2, 1, 3)
        if self._use_banded(steps):
            # score only the in-window offsets: scores[..., t, d] pairs
            # position t with position t - d, so no (T, T) tensor is built
            w = cfg.window
            q = np.ascontiguousarray(q)
            k = np.ascontiguousarray(k)
            v = np.ascontiguousarray(v)
            scores = np.full((batch, nh, steps, w), NEG_INF, dtype=u.dtype)
            np.einsum("bhtd,bhtd->bht", q, k, out=scores[:, :, :, 0])
            for d in range(1, w):
                np.einsum(
                    "bhtd,bhtd->bht", q[:, :, d:], k[:, :, : steps - d],
                    out=scores[:, :, d:, d],
                )
            scores /= np.sqrt(hd)
            alpha = softmax_lastaxis(scores)
            ctx_h = alpha[:, :, :, 0, None] * v
            for d in range(1, w):
                ctx_h[:, :, d:] += alpha[:, :, d:, d, None] * v[:, :, : steps - d]
            ctx = ctx_h.transpose(0, 2, 1, 3).reshape(batch, steps, c)
        else:
            scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(hd)
            scores = scores + self._attn_mask(steps)
            alpha = softmax_lastaxis(scores)
            ctx = (alpha @ v).transpose(0, 2, 1, 3).reshape(batch, steps, c)
        out = ctx @ p[f"b{i}.wo"]
        return out, {"u": u, "q": q, "k": k, "v": v, "alpha": alpha, "ctx": ctx}

    def _attn_mask(self, steps: int) -> np.ndarray:
        t_idx = np.arange(steps)
        causal = t_idx[None, :] <= t_idx[:, None]
        if self.config.mode != "global":
            causal = causal & (t_idx[None, :] > t_idx[:, None] - self.config.window)
        return np.where(causal, 0.0, NEG_INF).astype(self.dtype)

    def _attention_backward(self, g_out: np.ndarray, i: int, cache: dict):
        cfg = self.config
        p = self.params
        batch, steps, c = g_out.shape
        nh, hd = cfg.heads, c // cfg.heads
        grads = {}
        grads[f"b{i}.wo"] = cache["ctx"].reshape(-1, c).T @ g_out.reshape(-1, c)
        g_ctx = (g_out @ p[f"b{i}.wo"].T).reshape(batch, steps, nh, hd).transpose(0, 2, 1, 3)
        alpha, q, k, v = cache["alpha"], cache["q"], cache["k"], cache["v"]
        if self._use_banded(steps):
            w = cfg.window
            g_ctx = np.ascontiguousarray(g_ctx)
            g_alpha = np.zeros_like(alpha)
            np.einsum("bhtd,bhtd->bht", g_ctx, v, out=g_alpha[:, :, :, 0])
            for d in range(1, w):
                np.einsum(
                    "bhtd,bhtd->bht", g_ctx[:, :, d:], v[:, :, : steps - d],
                    out=g_alpha[:, :, d:, d],
                )
            g_scores = alpha * (g_alpha - (g_alpha * alpha).sum(axis=-1, keepdims=True))
            g_scores /= np.sqrt(hd)
            g_q = g_scores[:, :, :, 0, None] * k
            g_k = g_scores[:, :, :, 0, None] * q
            g_v = alpha[:, :, :, 0, None] * g_ctx
            for d in range(1, w):
                gs = g_scores[:, :, d:, d, None]
                g_q[:, :, d:] += gs * k[:, :, : steps - d]
                g_k[:, :, : steps - d] += gs * q[:, :, d:]
                g_v[:, :, : steps - d] += alpha[:, :, d:, d, None] * g_ctx[:, :, d:]
        else:
            g_alpha = g_ctx @ v.transpose(0, 1, 3, 2)
            g_v = alpha.transpose(0, 1, 3, 2) @ g_ctx
            g_scores = alpha * (g_alpha - (g_alpha * alpha).sum(axis=-1, keepdims=True))
            g_scores /= np.sqrt(hd)
            g_q = g_scores @ k
            g_k = g_scores.transpose(0, 1, 3, 2) @ q
        u_flat = cache["u"].reshape(-1, c)
        g_u = np.zeros_like(cache["u"])
        for name, g in (("wq", g_q), ("wk", g_k), ("wv", g_v)):
            g2 = g.transpose(0, 2, 1, 3).reshape(-1, c)
            grads[f"b{i}.{name}"] = u_flat.T @ g2
            g_u += (g2 @ p[f"b{i}.{name}"].T).reshape(cache["u"].shape)
        return g_u, grads

    def _retrieval_branch(self, h: np.ndarray, i: int, frozen=None):
        cfg = self.config
        adapters = self._adapters(i)
        inj_params = self._injection(i)
        if frozen is not None:
            out, v_syms = frozen
            qvec = kvec = vvec = None
        else:
            qvec, kvec, vvec, qbit, kbit, vbit = project_and_binarize(h, adapters)
            out = batch_retrieve(
                pack_bits(qbit, cfg.route_bits),
                pack_bits(kbit, cfg.route_bits),
                cfg.route_bits,
            )
            v_syms = pack_bits(vbit, cfg.route_bits)
        read = gather_values(out, v_syms)
        inj, (y, bits, mask_c) = inject_forward(read, out.mask, inj_params, cfg.route_bits)
        return inj.astype(self.dtype), {
            "out": out, "v_syms": v_syms, "y": y, "bits": bits, "mask_c": mask_c,
            "qvec": qvec, "kvec": kvec, "vvec": vvec, "h_in": h,
        }

    def forward(self, tokens: np.ndarray, frozen_retrieval=None):
        """Run the decoder; returns (logits, cache).

        frozen_retrieval, when given, is a list of per-layer
        (RetrievalOutput, value_symbols) pairs that replace the discrete
        retrieval computation — used for finite-difference checks where the
        symbol streams must not respond to parameter perturbations.
        """
        cfg = self.config
        p = self.params
        if tokens.min() < 0 or tokens.max() >= cfg.vocab:
            raise InputError("token id out of range")
        h = p["embed"][tokens]
        cache = {"tokens": tokens, "blocks": []}
        for i in range(cfg.layers):
            blk: dict = {"h_in": h}
            inj = None
            if cfg.uses_retrieval:
                frozen = None if frozen_retrieval is None else frozen_retrieval[i]
                inj, blk["rosa"] = self._retrieval_branch(h, i, frozen)
            if cfg.mode == "pre_attn":
                mmix = mix_pre_attn(h, inj, p[f"b{i}.alpha0"])
                blk["mmix"], blk["inj"] = mmix, inj
                u1 = layer_norm(mmix, p[f"b{i}.ln1"])
            else:
                u1 = layer_norm(h, p[f"b{i}.ln1"])
            a, blk["attn"] = self._attention(u1, i)
            h1 = h + a
            if cfg.mode == "post_attn":
                blk["inj"] = inj
                h1 = h1 + inj
            u2 = layer_norm(h1, p[f"b{i}.ln2"])
            pre = u2 @ p[f"b{i}.mlp_in"]
            act = silu(pre)
            h = h1 + act @ p[f"b{i}.mlp_out"]
            blk.update({"h1": h1, "u2": u2, "pre": pre, "act": act})
            cache["blocks"].append(blk)
        u_f = layer_norm(h, p["ln_f"])
        logits = u_f @ p["head"]
        cache.update({"h_final": h, "u_f": u_f})
        return logits, cache

    def loss(self, logits: np.ndarray, targets: np.ndarray):
        """Mean cross-entropy over positions where targets >= 0."""
        sel = targets >= 0
        n = int(sel.sum())
        if n == 0:
            raise InputError("no target positions")
        probs = softmax_lastaxis(logits)
        picked = probs[sel, targets[sel]]
        loss = -float(np.log(np.maximum(picked, 1e-300)).mean())
        g_logits = np.zeros_like(logits)
        g_logits[sel] = probs[sel]
        g_logits[sel, targets[sel]] -= 1.0
        g_logits /= n
        return loss, g_logits

    # -- backward ----------------------------------------------------------

    def backward(self, g_logits: np.ndarray, cache: dict, include_surrogate: bool = True):
        cfg = self.config
        p = self.params
        c = cfg.dim
        grads = {name: np.zeros_like(arr) for name, arr in self.params.items()}
        grads["head"] += cache["u_f"].reshape(-1, c).T @ g_logits.reshape(-1, cfg.vocab)
        g_uf = g_logits @ p["head"].T
        g_h, g_lnf = layer_norm_backward(g_uf, cache["h_final"], p["ln_f"])
        grads["ln_f"] += g_lnf
        for i in reversed(range(cfg.layers)):
            blk = cache["blocks"][i]
            g_h1 = g_h.copy()
            # MLP
            g_act = g_h @ p[f"b{i}.mlp_out"].T
            grads[f"b{i}.mlp_out"] += blk["act"].reshape(-1, blk["act"].shape[-1]).T @ g_h.reshape(-1, c)
            g_pre = g_act * silu_grad(blk["pre"])
            grads[f"b{i}.mlp_in"] += blk["u2"].reshape(-1, c).T @ g_pre.reshape(-1, g_pre.shape[-1])
            g_u2 = g_pre @ p[f"b{i}.mlp_in"].T
            g_from_ln2, g_ln2 = layer_norm_backward(g_u2, blk["h1"], p[f"b{i}.ln2"])
            grads[f"b{i}.ln2"] += g_ln2
            g_h1 += g_from_ln2
            # attention + fusion
            g_u1, attn_grads = self._attention_backward(g_h1, i, blk["attn"])
            for name, g in attn_grads.items():
                grads[name] += g
            g_h_prev = g_h1.copy()
            g_inj = None
            if cfg.mode == "pre_attn":
                g_mmix, g_ln1 = layer_norm_backward(g_u1, blk["mmix"], p[f"b{i}.ln1"])
                grads[f"b{i}.ln1"] += g_ln1
                g_alpha0, g_h_mix, g_inj = backprop_gate(
                    g_mmix, blk["h_in"], blk["inj"], p[f"b{i}.alpha0"]
                )
                grads[f"b{i}.alpha0"] += g_alpha0
                g_h_prev += g_h_mix
            else:
                g_from_ln1, g_ln1 = layer_norm_backward(g_u1, blk["h_in"], p[f"b{i}.ln1"])
                grads[f"b{i}.ln1"] += g_ln1
                g_h_prev += g_from_ln1
                if cfg.mode == "post_attn":
                    g_inj = g_h1
            if g_inj is not None:
                g_h_prev += self._retrieval_backward(g_inj, i, blk["rosa"], grads, include_surrogate)
            g_h = g_h_prev
        np.add.at(grads["embed"], cache["tokens"], g_h)
        return grads

    def _retrieval_backward(self, g_inj, i, rosa, grads, include_surrogate):
        inj_params = self._injection(i)
        g_e0, g_e1, g_w_out, theta = backprop_head(
            g_inj, rosa["y"], rosa["bits"], rosa["mask_c"], inj_params
        )
        grads[f"b{i}.e0"] += g_e0
        grads[f"b{i}.e1"] += g_e1
        grads[f"b{i}.w_out"] += g_w_out
        if not include_surrogate or rosa["vvec"] is None:
            return 0.0
        out = rosa["out"]
        g_vvec = backward_value(theta, out, rosa["vvec"])
        g_qvec = backward_query(theta, out, rosa["vvec"], rosa["qvec"])
        g_kvec = backward_key(theta, out, rosa["vvec"], rosa["kvec"])
        g_wq, g_wk, g_wv, g_scale, g_h = backprop_adapters(
            g_qvec, g_kvec, g_vvec, rosa["h_in"], self._adapters(i)
        )
        grads[f"b{i}.ad_q"] += g_wq
        grads[f"b{i}.ad_k"] += g_wk
        grads[f"b{i}.ad_v"] += g_wv
        grads[f"b{i}.ad_ln"] += g_scale
        return g_h

    def loss_and_grads(self, tokens, targets, include_surrogate=True, frozen_retrieval=None):
        logits, cache = self.forward(tokens, frozen_retrieval=frozen_retrieval)
        loss, g_logits = self.loss(logits, targets)
        grads = self.backward(g_logits, cache, include_surrogate=include_surrogate)
        return loss, grads, logits


class Adam:
    """Adam with in-place updates over a model's parameter dict."""

    def __init__(self, model: TinyModel, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8,
                 lr_scales: dict[str, float] | None = None):
        self.model = model
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(a) for k, a in model.params.items()}
        self.v = {k: np.zeros_like(a) for k, a in model.params.items()}
        # substring-matched per-parameter lr multipliers
        self.scales = {}
        for name in model.params:
            scale = 1.0
            for pat, s in (lr_scales or {}).items():
                if pat in name:
                    scale = s
            self.scales[name] = scale

    def step(self, grads: dict[str, np.ndarray], lr: float | None = None):
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name, param in self.model.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            param -= lr * self.scales[name] * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


def cosine_lr(step: int, total_steps: int, lr_max=3e-4, lr_min=3e-5) -> float:
    if total_steps <= 1:
        return lr_max
    frac = min(step, total_steps - 1) / (total_steps - 1)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + np.cos(np.pi * frac))


def train_step(model: TinyModel, optimizer: Adam, tokens, targets, lr=None) -> float:
    loss, grads, _ = model.loss_and_grads(tokens, targets, include_surrogate=True)
    if not np.isfinite(loss):
        raise InputError(f"non-finite training loss {loss}")
    optimizer.step(grads, lr=lr)
    return loss
