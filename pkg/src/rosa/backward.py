"""Counterfactual backward pass.

(e0, e1, W_out) and the gate get exact chain-rule gradients. The value,
query, and key streams get surrogate gradients: value via destination
scatter, query via per-bit counterfactual differencing, key via the same
differencing aggregated at run level. Retrieval destinations themselves are
treated as constants throughout.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError
from .injection import InjectionParams, sigmoid
from .retrieval import RetrievalOutput
from .symbolizer import LN_EPS, AdapterParams


def _sigmoid_grad(x):
    s = sigmoid(x)
    return s * (1.0 - s)


def backprop_head(g_inj: np.ndarray, y: np.ndarray, bits: np.ndarray, mask_c: np.ndarray, params: InjectionParams):
    """Exact gradients for (e0, e1, W_out) plus the weighted residual theta.

    Requires the (y, bits, mask_c) cache from inject_forward.
    """
    if y is None or bits is None or mask_c is None:
        raise ConfigurationError("forward artifacts missing; run inject_forward first")
    g_y = g_inj @ params.w_out
    g_e0 = (mask_c * (1.0 - bits) * g_y).sum(axis=(0, 1))
    g_e1 = (mask_c * bits * g_y).sum(axis=(0, 1))
    dim = y.shape[-1]
    g_w_out = g_inj.reshape(-1, dim).T @ y.reshape(-1, dim)
    theta = g_y * params.delta
    return g_e0, g_e1, g_w_out, theta


def backward_value(theta: np.ndarray, out: RetrievalOutput, vvec: np.ndarray) -> np.ndarray:
    """Scatter theta onto destinations; surrogate derivative sigmoid'(vvec)."""
    m = out.route_bits
    batch, steps, dim = theta.shape
    routes = dim // m
    theta_r = theta.reshape(batch, steps, routes, m)
    g_pre = np.zeros((batch, steps, routes, m), dtype=theta.dtype)
    b_idx, t_idx, r_idx = np.nonzero(out.tau >= 0)
    if b_idx.size:
        np.add.at(
            g_pre,
            (b_idx, out.tau[b_idx, t_idx, r_idx], r_idx),
            theta_r[b_idx, t_idx, r_idx],
        )
    return _sigmoid_grad(vvec) * g_pre.reshape(batch, steps, dim)


def _gather_p(p_run: np.ndarray, tau_u: np.ndarray) -> np.ndarray:
    """p_run is (B, T, R, M); tau_u is (B, T, R, J). Returns (B, T, R, J, M)."""
    batch, _, routes, _ = p_run.shape
    idx = np.clip(tau_u, 0, None)
    b_ax = np.arange(batch)[:, None, None, None]
    r_ax = np.arange(routes)[None, None, :, None]
    gathered = p_run[b_ax, idx, r_ax, :]
    return gathered * (tau_u >= 0)[..., None]


def backward_query(theta: np.ndarray, out: RetrievalOutput, vvec: np.ndarray, qvec: np.ndarray) -> np.ndarray:
    """Per-bit counterfactual differencing of the value surrogate read-out."""
    m = out.route_bits
    batch, steps, dim = theta.shape
    routes = dim // m
    theta_r = theta.reshape(batch, steps, routes, m)
    p_run = sigmoid(vvec).reshape(batch, steps, routes, m)
    hat1 = _gather_p(p_run, out.tau_cf[..., 1])
    hat0 = _gather_p(p_run, out.tau_cf[..., 0])
    contracted = np.einsum("btrm,btrjm->btrj", theta_r, hat1 - hat0)
    return _sigmoid_grad(qvec) * contracted.reshape(batch, steps, dim)


def backward_key(theta: np.ndarray, out: RetrievalOutput, vvec: np.ndarray, kvec: np.ndarray) -> np.ndarray:
    """Counterfactual differencing aggregated over run-level destinations.

    Gradients land only at key run-start positions; within-run positions
    and folding-boundary effects are ignored by construction.
    """
    m = out.route_bits
    batch, steps, dim = theta.shape
    routes = dim // m
    theta_r = theta.reshape(batch, steps, routes, m)
    p_sig = sigmoid(vvec).reshape(batch, steps, routes, m)
    sg_k = _sigmoid_grad(kvec).reshape(batch, steps, routes, m)
    g_k = np.zeros((batch, steps, routes, m), dtype=theta.dtype)
    for b in range(batch):
        counts = [len(out.run_starts[b][r]) for r in range(routes)]
        l_max = max(counts) if counts else 0
        if l_max == 0:
            continue
        starts = np.zeros((routes, l_max), dtype=np.int64)
        for r in range(routes):
            starts[r, : counts[r]] = out.run_starts[b][r]
        # acc(r, l, j, m) = sum_t theta * ([ridx1 = l] - [ridx0 = l])
        acc = np.zeros((routes, l_max, m, m), dtype=theta.dtype)
        for u, sign in ((1, 1.0), (0, -1.0)):
            ridx = out.ridx_cf[b, :, :, :, u]
            t_idx, r_idx, j_idx = np.nonzero(ridx >= 0)
            if t_idx.size:
                np.add.at(
                    acc,
                    (r_idx, ridx[t_idx, r_idx, j_idx], j_idx),
                    sign * theta_r[b, t_idx, r_idx],
                )
        for r in range(routes):
            n_runs = counts[r]
            if n_runs == 0:
                continue
            st = starts[r, :n_runs]
            p_here = p_sig[b, st, r, :]                      # (L, M)
            u_diff = np.einsum("lm,ljm->lj", p_here, acc[r, :n_runs])
            g_k[b, st, r, :] += sg_k[b, st, r, :] * u_diff
    return g_k.reshape(batch, steps, dim)


def layer_norm_backward(g_u: np.ndarray, h: np.ndarray, scale: np.ndarray | None, eps: float = LN_EPS):
    """Backward through LN(h) * scale. Returns (g_h, g_scale or None)."""
    mu = h.mean(axis=-1, keepdims=True)
    var = h.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    u_hat = (h - mu) * inv
    if scale is not None:
        g_scale = (g_u * u_hat).sum(axis=tuple(range(h.ndim - 1)))
        g_hat = g_u * scale
    else:
        g_scale = None
        g_hat = g_u
    mean_g = g_hat.mean(axis=-1, keepdims=True)
    mean_gu = (g_hat * u_hat).mean(axis=-1, keepdims=True)
    g_h = inv * (g_hat - mean_g - u_hat * mean_gu)
    return g_h, g_scale


def backprop_adapters(
    g_qvec: np.ndarray,
    g_kvec: np.ndarray,
    g_vvec: np.ndarray,
    h: np.ndarray,
    params: AdapterParams,
    normalize: bool = True,
):
    """Standard linear(+LN) backprop for the adapter projections.

    Returns (g_wq, g_wk, g_wv, g_ln_scale, g_h).
    """
    from .symbolizer import layer_norm

    dim = h.shape[-1]
    u = layer_norm(h, params.ln_scale) if normalize else h
    u_flat = u.reshape(-1, dim)
    g_wq = u_flat.T @ g_qvec.reshape(-1, dim)
    g_wk = u_flat.T @ g_kvec.reshape(-1, dim)
    g_wv = u_flat.T @ g_vvec.reshape(-1, dim)
    g_u = g_qvec @ params.w_q.T + g_kvec @ params.w_k.T + g_vvec @ params.w_v.T
    if normalize:
        g_h, g_scale = layer_norm_backward(g_u, h, params.ln_scale)
    else:
        g_h, g_scale = g_u, None
    return g_wq, g_wk, g_wv, g_scale, g_h


def backprop_gate(g_m: np.ndarray, h: np.ndarray, inj: np.ndarray, alpha0: np.ndarray):
    """Gradients through the pre-attn mix (1-a)h + a*inj, a = sigmoid(alpha0)."""
    alpha = sigmoid(alpha0)
    g_alpha0 = (_sigmoid_grad(alpha0) * (g_m * (inj - h))).sum(
        axis=tuple(range(h.ndim - 1))
    )
    g_h_partial = (1.0 - alpha) * g_m
    g_inj_partial = alpha * g_m
    return g_alpha0, g_h_partial, g_inj_partial
