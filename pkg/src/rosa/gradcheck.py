"""Finite-difference and dense-oracle checks for every gradient group.

Used both by the test suite and the `gradcheck` CLI subcommand. The
differentiable groups (e0, e1, W_out, alpha0, adapters, value surrogate)
are checked against central finite differences with the retrieval tables
frozen; the query/key surrogate gradients are checked for exact agreement
with the literal loop transcription in the oracle module.
"""

from __future__ import annotations

import numpy as np

from .backward import (
    backprop_adapters,
    backprop_gate,
    backprop_head,
    backward_key,
    backward_query,
    backward_value,
)
from .injection import InjectionParams, gather_values, inject_forward, mix_pre_attn, sigmoid
from .oracle import dense_surrogate_grads
from .retrieval import batch_retrieve
from .symbolizer import AdapterParams, pack_bits, project_and_binarize

FD_STEP = 1e-5
FD_TOL = 1e-4
DENSE_TOL = 1e-12


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-8)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def finite_difference(loss_fn, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = loss_fn()
        flat[i] = orig - step
        down = loss_fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return grad


def _instance(seed: int, batch=2, steps=24, dim=8, m=2):
    rng = np.random.default_rng(seed)
    routes = dim // m
    h = rng.normal(size=(batch, steps, dim))
    adapters = AdapterParams(
        w_q=rng.normal(size=(dim, dim)) / np.sqrt(dim),
        w_k=rng.normal(size=(dim, dim)) / np.sqrt(dim),
        w_v=rng.normal(size=(dim, dim)) / np.sqrt(dim),
        ln_scale=1.0 + 0.1 * rng.normal(size=dim),
    )
    qvec, kvec, vvec, qbit, kbit, vbit = project_and_binarize(h, adapters)
    q_syms = pack_bits(qbit, m)
    k_syms = pack_bits(kbit, m)
    v_syms = pack_bits(vbit, m)
    out = batch_retrieve(q_syms, k_syms, m, engine="python")
    params = InjectionParams(
        e0=0.5 * rng.normal(size=dim),
        e1=0.5 * rng.normal(size=dim),
        w_out=np.eye(dim) + 0.2 * rng.normal(size=(dim, dim)),
        alpha0=rng.normal(size=dim),
    )
    loss_w = rng.normal(size=(batch, steps, dim))
    return rng, h, adapters, out, v_syms, params, loss_w, qvec, kvec, vvec


def check_head(seed: int = 0):
    _, h, _, out, v_syms, params, loss_w, *_ = _instance(seed)
    read = gather_values(out, v_syms)

    def loss():
        inj, _ = inject_forward(read, out.mask, params, out.route_bits)
        return float((loss_w * inj).sum())

    inj, (y, bits, mask_c) = inject_forward(read, out.mask, params, out.route_bits)
    g_e0, g_e1, g_w_out, _ = backprop_head(loss_w, y, bits, mask_c, params)
    errs = {
        "e0": rel_err(g_e0, finite_difference(loss, params.e0)),
        "e1": rel_err(g_e1, finite_difference(loss, params.e1)),
        "w_out": rel_err(g_w_out, finite_difference(loss, params.w_out)),
    }
    return errs


def check_gate(seed: int = 0):
    rng, h, _, out, v_syms, params, loss_w, *_ = _instance(seed)
    read = gather_values(out, v_syms)
    inj, _ = inject_forward(read, out.mask, params, out.route_bits)

    def loss():
        return float((loss_w * mix_pre_attn(h, inj, params.alpha0)).sum())

    g_alpha0, g_h, g_inj = backprop_gate(loss_w, h, inj, params.alpha0)
    errs = {"alpha0": rel_err(g_alpha0, finite_difference(loss, params.alpha0))}
    # h and inj partials against FD too (cheap at this size)
    errs["gate_h"] = rel_err(g_h, finite_difference(loss, h))
    errs["gate_inj"] = rel_err(g_inj, finite_difference(loss, inj))
    return errs


def check_value_surrogate(seed: int = 0):
    rng, h, _, out, _, params, loss_w, _, _, vvec = _instance(seed)
    vvec = vvec.copy()
    theta = loss_w  # stand-in for G_y * delta, any fixed tensor works
    m = out.route_bits
    batch, steps, dim = theta.shape
    routes = dim // m

    def loss():
        p = sigmoid(vvec).reshape(batch, steps, routes, m)
        total = 0.0
        theta_r = theta.reshape(batch, steps, routes, m)
        for b in range(batch):
            for t in range(steps):
                for r in range(routes):
                    tau = out.tau[b, t, r]
                    if tau >= 0:
                        total += float((theta_r[b, t, r] * p[b, tau, r]).sum())
        return total

    g_v = backward_value(theta, out, vvec)
    return {"v_surrogate": rel_err(g_v, finite_difference(loss, vvec))}


def check_adapters(seed: int = 0):
    rng = np.random.default_rng(seed + 100)
    batch, steps, dim = 2, 10, 6
    h = rng.normal(size=(batch, steps, dim))
    adapters = AdapterParams(
        w_q=rng.normal(size=(dim, dim)),
        w_k=rng.normal(size=(dim, dim)),
        w_v=rng.normal(size=(dim, dim)),
        ln_scale=1.0 + 0.1 * rng.normal(size=dim),
    )
    w_loss = {name: rng.normal(size=(batch, steps, dim)) for name in "qkv"}

    def loss():
        qvec, kvec, vvec, *_ = project_and_binarize(h, adapters)
        return float(
            (w_loss["q"] * np.sin(qvec)).sum()
            + (w_loss["k"] * np.sin(kvec)).sum()
            + (w_loss["v"] * np.sin(vvec)).sum()
        )

    qvec, kvec, vvec, *_ = project_and_binarize(h, adapters)
    g_q = w_loss["q"] * np.cos(qvec)
    g_k = w_loss["k"] * np.cos(kvec)
    g_v = w_loss["v"] * np.cos(vvec)
    g_wq, g_wk, g_wv, g_scale, g_h = backprop_adapters(g_q, g_k, g_v, h, adapters)
    return {
        "w_q": rel_err(g_wq, finite_difference(loss, adapters.w_q)),
        "w_k": rel_err(g_wk, finite_difference(loss, adapters.w_k)),
        "w_v": rel_err(g_wv, finite_difference(loss, adapters.w_v)),
        "ln_scale": rel_err(g_scale, finite_difference(loss, adapters.ln_scale)),
        "adapter_input": rel_err(g_h, finite_difference(loss, h)),
    }


def check_qk_dense(seed: int = 0):
    _, h, _, out, _, params, loss_w, qvec, kvec, vvec = _instance(seed, steps=32)
    theta = loss_w
    g_q = backward_query(theta, out, vvec, qvec)
    g_k = backward_key(theta, out, vvec, kvec)
    ref_v, ref_q, ref_k = dense_surrogate_grads(
        theta, out.tau, out.tau_cf, out.ridx_cf, out.run_starts,
        vvec, qvec, kvec, out.route_bits,
    )
    g_v = backward_value(theta, out, vvec)
    return {
        "q_vs_dense": float(np.abs(g_q - ref_q).max(initial=0.0)),
        "k_vs_dense": float(np.abs(g_k - ref_k).max(initial=0.0)),
        "v_vs_dense": float(np.abs(g_v - ref_v).max(initial=0.0)),
    }


GROUPS = {
    "head": (check_head, FD_TOL),
    "gate": (check_gate, FD_TOL),
    "value": (check_value_surrogate, FD_TOL),
    "adapters": (check_adapters, FD_TOL),
    "qk_dense": (check_qk_dense, DENSE_TOL),
}


def run_gradcheck(seed: int = 0):
    """Returns {name: (max_err, tol, passed)} across all groups."""
    report = {}
    for group, (fn, tol) in GROUPS.items():
        for name, err in fn(seed).items():
            report[f"{group}.{name}"] = (err, tol, err <= tol)
    return report
