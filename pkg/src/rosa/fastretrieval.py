"""Compiled batch retrieval kernel.

Same semantics as the pure-Python route_step path, restated over flat
arrays so numba can run one (batch, route) task per thread. Transition
tables are dense (state x alphabet) int32 arrays, which is why this engine
is limited to route widths M <= 8.
"""

from __future__ import annotations

import numpy as np
from numba import config as numba_config
from numba import njit, prange, set_num_threads

from .errors import ConfigurationError


@njit(cache=True)
def _renorm(len_, link, state, length):
    if length == 0:
        return 0, 0
    while link[state] != -1 and length <= len_[link[state]]:
        state = link[state]
    return state, length


@njit(cache=True)
def _advance(len_, link, trans, state, length, symbol):
    state, length = _renorm(len_, link, state, length)
    if trans[state, symbol] != -1:
        return trans[state, symbol], length + 1
    while state != -1 and trans[state, symbol] == -1:
        state = link[state]
    if state == -1:
        return 0, 0
    return trans[state, symbol], len_[state] + 1


@njit(cache=True)
def _dest(len_, link, recent, run_starts, n_runs, state, length, t):
    if length == 0:
        return -1, -1
    state, length = _renorm(len_, link, state, length)
    p = recent[state]
    nxt = p + 1
    if nxt < n_runs and run_starts[nxt] < t:
        return run_starts[nxt], nxt
    return -1, -1


@njit(cache=True, parallel=True)
def _batch_kernel(qs, ks, m_bits, tau, tau_cf, ridx_cf, run_of_t, starts_pad, n_runs_out):
    batch, steps, routes = qs.shape
    n_tasks = batch * routes
    max_states = 2 * steps + 4
    alphabet = 1 << m_bits
    for task in prange(n_tasks):
        b = task // routes
        r = task % routes
        len_ = np.zeros(max_states, dtype=np.int64)
        link = np.full(max_states, -1, dtype=np.int64)
        recent = np.full(max_states, -1, dtype=np.int64)
        trans = np.full((max_states, alphabet), -1, dtype=np.int32)
        run_starts = np.zeros(steps, dtype=np.int64)
        run_last_sym = -1
        n_states = 1
        last = 0
        n_runs = 0
        cur_state = 0
        cur_len = 0
        cf_state = np.zeros((m_bits, 2), dtype=np.int64)
        cf_len = np.zeros((m_bits, 2), dtype=np.int64)
        last_q = -1
        for t in range(steps):
            k_sym = ks[b, t, r]
            if n_runs == 0 or run_last_sym != k_sym:
                run_starts[n_runs] = t
                run_last_sym = k_sym
                n_runs += 1
                # online SAM extend with the new run symbol
                pos = n_runs - 1
                cur = n_states
                n_states += 1
                len_[cur] = len_[last] + 1
                recent[cur] = pos
                p = last
                while p != -1 and trans[p, k_sym] == -1:
                    trans[p, k_sym] = cur
                    p = link[p]
                if p == -1:
                    link[cur] = 0
                else:
                    q = trans[p, k_sym]
                    if len_[p] + 1 == len_[q]:
                        link[cur] = q
                    else:
                        clone = n_states
                        n_states += 1
                        len_[clone] = len_[p] + 1
                        link[clone] = link[q]
                        recent[clone] = recent[q]
                        for a in range(alphabet):
                            trans[clone, a] = trans[q, a]
                        while p != -1 and trans[p, k_sym] == q:
                            trans[p, k_sym] = clone
                            p = link[p]
                        link[q] = clone
                        link[cur] = clone
                last = cur
                s = last
                while s != -1:
                    recent[s] = pos
                    s = link[s]
            q_sym = qs[b, t, r]
            if q_sym != last_q:
                pre_state, pre_len = cur_state, cur_len
                cur_state, cur_len = _advance(len_, link, trans, pre_state, pre_len, q_sym)
                for j in range(m_bits):
                    for u in range(2):
                        forced = (q_sym & ~(1 << j)) | (u << j)
                        if forced == q_sym:
                            cf_state[j, u], cf_len[j, u] = cur_state, cur_len
                        else:
                            cf_state[j, u], cf_len[j, u] = _advance(
                                len_, link, trans, pre_state, pre_len, forced
                            )
                last_q = q_sym
            tv, _ = _dest(len_, link, recent, run_starts, n_runs, cur_state, cur_len, t)
            tau[b, t, r] = tv
            run_of_t[b, t, r] = n_runs - 1
            for j in range(m_bits):
                for u in range(2):
                    tc, rc = _dest(
                        len_, link, recent, run_starts, n_runs,
                        cf_state[j, u], cf_len[j, u], t,
                    )
                    tau_cf[b, t, r, j, u] = tc
                    ridx_cf[b, t, r, j, u] = rc
        n_runs_out[b, r] = n_runs
        for i in range(n_runs):
            starts_pad[b, r, i] = run_starts[i]


def batch_retrieve_numba(q_syms, k_syms, route_bits: int, workers: int | None = None):
    from .retrieval import RetrievalOutput, default_workers

    if route_bits > 8:
        raise ConfigurationError("numba engine supports M <= 8; use engine='python'")
    requested = workers if workers else default_workers()
    set_num_threads(max(1, min(requested, numba_config.NUMBA_NUM_THREADS)))
    qs = np.ascontiguousarray(q_syms, dtype=np.int64)
    ks = np.ascontiguousarray(k_syms, dtype=np.int64)
    batch, steps, routes = qs.shape
    m = route_bits
    tau = np.full((batch, steps, routes), -1, dtype=np.int64)
    tau_cf = np.full((batch, steps, routes, m, 2), -1, dtype=np.int64)
    ridx_cf = np.full((batch, steps, routes, m, 2), -1, dtype=np.int64)
    run_of_t = np.zeros((batch, steps, routes), dtype=np.int64)
    starts_pad = np.full((batch, routes, steps), -1, dtype=np.int64)
    n_runs = np.zeros((batch, routes), dtype=np.int64)
    _batch_kernel(qs, ks, m, tau, tau_cf, ridx_cf, run_of_t, starts_pad, n_runs)
    run_starts = [
        [list(starts_pad[b, r, : n_runs[b, r]]) for r in range(routes)]
        for b in range(batch)
    ]
    return RetrievalOutput(
        tau=tau,
        mask=(tau >= 0).astype(np.uint8),
        tau_cf=tau_cf,
        ridx_cf=ridx_cf,
        run_start_of_time=run_of_t,
        run_starts=run_starts,
        route_bits=m,
    )
