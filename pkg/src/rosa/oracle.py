"""Brute-force references and statistical estimators for the property suite.

Everything here trades speed for obviousness: naive scans, dense loops, and
Monte-Carlo estimates used as independent checks on the optimized engines.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError
from .symbolizer import unpack_symbols


def _occurrences_end(hay: list[int], needle: list[int]) -> list[int]:
    """End indices (inclusive) of all occurrences of needle in hay."""
    n, m = len(hay), len(needle)
    out = []
    for start in range(n - m + 1):
        if hay[start : start + m] == needle:
            out.append(start + m - 1)
    return out


def brute_match(key_runs: list[int], query_runs: list[int]):
    """Longest suffix of query_runs occurring in key_runs, scanned naively.

    Returns (length, most_recent_end_index or None). Suffixes are tried
    longest-first; the end index is the maximum over all occurrences.
    """
    for length in range(len(query_runs), 0, -1):
        needle = query_runs[len(query_runs) - length :]
        ends = _occurrences_end(key_runs, needle)
        if ends:
            return length, max(ends)
    return 0, None


class NaiveRouteMatcher:
    """Streaming re-statement of the route matcher without a suffix automaton.

    Mirrors the engine's semantics: keys fold into runs, the matched string
    advances only at query-run boundaries (longest suffix of
    previous-match + symbol found in the folded keys, by brute scan), and
    the destination is re-evaluated every step.
    """

    def __init__(self) -> None:
        self.key_runs: list[int] = []
        self.run_starts: list[int] = []
        self.matched: list[int] = []
        self.cf_matched: dict[tuple[int, int], list[int]] = {}
        self.last_query: int | None = None

    def _advance(self, prev: list[int], symbol: int) -> list[int]:
        w = prev + [symbol]
        for drop in range(len(w)):
            cand = w[drop:]
            if _occurrences_end(self.key_runs, cand):
                return cand
        return []

    def _dest(self, matched: list[int], t: int):
        if not matched:
            return -1, -1
        p = max(_occurrences_end(self.key_runs, matched))
        if p + 1 < len(self.run_starts) and self.run_starts[p + 1] < t:
            return self.run_starts[p + 1], p + 1
        return -1, -1

    def step(self, key_symbol: int, query_symbol: int, t: int, route_bits: int):
        if not self.key_runs or self.key_runs[-1] != key_symbol:
            self.key_runs.append(key_symbol)
            self.run_starts.append(t)
        if query_symbol != self.last_query:
            prev = list(self.matched)
            self.matched = self._advance(prev, query_symbol)
            self.cf_matched = {}
            for j in range(route_bits):
                for u in (0, 1):
                    forced = (query_symbol & ~(1 << j)) | (u << j)
                    self.cf_matched[(j, u)] = self._advance(prev, forced)
            self.last_query = query_symbol
        tau, _ = self._dest(self.matched, t)
        tau_cf = np.full((route_bits, 2), -1, dtype=np.int64)
        ridx_cf = np.full((route_bits, 2), -1, dtype=np.int64)
        for (j, u), w in self.cf_matched.items():
            tau_cf[j, u], ridx_cf[j, u] = self._dest(w, t)
        return tau, tau_cf, ridx_cf


def naive_retrieve(q_syms: np.ndarray, k_syms: np.ndarray, route_bits: int):
    """Full naive retrieval over a (B, T, R) pair of symbol streams."""
    batch, steps, routes = q_syms.shape
    tau = np.full((batch, steps, routes), -1, dtype=np.int64)
    tau_cf = np.full((batch, steps, routes, route_bits, 2), -1, dtype=np.int64)
    ridx_cf = np.full((batch, steps, routes, route_bits, 2), -1, dtype=np.int64)
    for b in range(batch):
        for r in range(routes):
            matcher = NaiveRouteMatcher()
            for t in range(steps):
                tau[b, t, r], tau_cf[b, t, r], ridx_cf[b, t, r] = matcher.step(
                    int(k_syms[b, t, r]), int(q_syms[b, t, r]), t, route_bits
                )
    return tau, tau_cf, ridx_cf


# --- quantized-attention limit -------------------------------------------

def quantized_attention(values: np.ndarray, match_set, beta: float, t: int | None = None) -> np.ndarray:
    """Softmax attention with 0/1 match scores, in closed form.

    ``values`` holds one vector per historical position; weights follow
    alpha = e^beta / (m e^beta + (t-m)) on matches, 1 / (...) elsewhere.
    """
    values = np.asarray(values, dtype=np.float64)
    if t is None:
        t = len(values)
    if t == 0:
        raise InputError("empty history")
    match_set = set(match_set)
    m = len(match_set)
    denom = m * np.exp(beta) + (t - m)
    out = np.zeros(values.shape[1:], dtype=np.float64)
    for i in range(t):
        w = np.exp(beta) / denom if i in match_set else 1.0 / denom
        out = out + w * values[i]
    return out


def successor_shift_check(values: np.ndarray, match_set, beta: float, rosa_tau: int, t: int | None = None) -> bool:
    """Check rosa_tau against the successor set of the matched positions.

    The successor set is {i+1 : i in match_set, i+1 < t}; rosa_tau must be
    its maximum (or -1 when empty), and large-beta attention over shifted
    values must equal the uniform average over that set.
    """
    values = np.asarray(values, dtype=np.float64)
    if t is None:
        t = len(values)
    successors = sorted(i + 1 for i in match_set if i + 1 < t)
    if not successors:
        return rosa_tau == -1
    if rosa_tau != max(successors):
        return False
    shifted = values[1 : t + 1]
    attn = quantized_attention(shifted, [i - 1 for i in successors], beta, t=t - 1)
    uniform = values[successors].mean(axis=0)
    return bool(np.allclose(attn, uniform, atol=1e-6))


# --- Monte-Carlo estimators (discretization channel properties) -----------

def collision_estimate(route_bits: int, samples: int, seed: int) -> float:
    """Fraction of independent balanced-bit symbol pairs that collide."""
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 1 << route_bits, size=samples)
    b = rng.integers(0, 1 << route_bits, size=samples)
    return float(np.mean(a == b))


def stability_estimate(route_bits: int, delta: float, samples: int, seed: int) -> float:
    """Two-view symbol mismatch rate under bounded per-view noise.

    Base variables are uniform on [-1, 1] (density bound 1/2), thresholded
    at 0; each view adds independent noise bounded by delta.
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(samples, route_bits))
    eq = rng.uniform(-delta, delta, size=x.shape)
    ek = rng.uniform(-delta, delta, size=x.shape)
    bits_q = (x + eq) > 0
    bits_k = (x + ek) > 0
    return float(np.mean(np.any(bits_q != bits_k, axis=1)))


# --- dense surrogate-gradient reference ----------------------------------

def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def dense_surrogate_grads(theta, tau, tau_cf, ridx_cf, run_starts, vvec, qvec, kvec, route_bits):
    """Literal nested-loop evaluation of the three surrogate gradients.

    ``run_starts`` is a list of per-(b, r) run-start index lists. All
    tensors are (B, T, C) with c = r * M + j. Returns (g_v, g_q, g_k).
    """
    m_bits = route_bits
    batch, steps, dim = theta.shape
    routes = dim // m_bits
    p_v = _sigmoid(vvec)
    sig_q = _sigmoid(qvec)
    sig_k = _sigmoid(kvec)
    acc_v = np.zeros_like(vvec)
    g_q = np.zeros_like(qvec)
    g_k = np.zeros_like(kvec)
    for b in range(batch):
        for r in range(routes):
            starts = run_starts[b][r]
            for t in range(steps):
                dest = tau[b, t, r]
                if dest >= 0:
                    for m in range(m_bits):
                        c = r * m_bits + m
                        acc_v[b, dest, c] += theta[b, t, c]
                for j in range(m_bits):
                    cj = r * m_bits + j
                    acc = 0.0
                    for m in range(m_bits):
                        cm = r * m_bits + m
                        hat = [0.0, 0.0]
                        for u in (0, 1):
                            tcf = tau_cf[b, t, r, j, u]
                            if tcf >= 0:
                                hat[u] = p_v[b, tcf, cm]
                        acc += theta[b, t, cm] * (hat[1] - hat[0])
                    g_q[b, t, cj] += sig_q[b, t, cj] * (1.0 - sig_q[b, t, cj]) * acc
            # run-level accumulators for the key branch
            for ell, start in enumerate(starts):
                for j in range(m_bits):
                    cj = r * m_bits + j
                    u_diff = 0.0
                    for t in range(steps):
                        for m in range(m_bits):
                            cm = r * m_bits + m
                            p_here = p_v[b, start, cm]
                            if ridx_cf[b, t, r, j, 1] == ell:
                                u_diff += theta[b, t, cm] * p_here
                            if ridx_cf[b, t, r, j, 0] == ell:
                                u_diff -= theta[b, t, cm] * p_here
                    g_k[b, start, cj] += (
                        sig_k[b, start, cj] * (1.0 - sig_k[b, start, cj]) * u_diff
                    )
    g_v = p_v * (1.0 - p_v) * acc_v
    return g_v, g_q, g_k


def binarize_reference(vec: np.ndarray) -> np.ndarray:
    """Elementwise loop restatement of the strict > 0 threshold."""
    out = np.zeros(vec.shape, dtype=np.uint8)
    flat_in = vec.reshape(-1)
    flat_out = out.reshape(-1)
    for i in range(flat_in.size):
        flat_out[i] = 1 if flat_in[i] > 0 else 0
    return out


def gather_reference(tau, mask, v_syms):
    """Index-by-index restatement of the destination gather."""
    batch, steps, routes = tau.shape
    out = np.zeros((batch, steps, routes), dtype=np.int64)
    for b in range(batch):
        for t in range(steps):
            for r in range(routes):
                if mask[b, t, r]:
                    out[b, t, r] = v_syms[b, tau[b, t, r], r]
    return out
