"""Per-(batch, route) streaming retrieval over symbol streams.

Keys fold into runs (adjacent duplicates collapse) and feed a suffix
automaton; queries drive a longest-suffix match cursor that advances only
at query-run boundaries. Each step yields a destination time index (start
of the run after the most recent occurrence of the matched string, if it
is strictly in the past) plus per-bit counterfactual destination tables.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InputError
from .sam import ROOT_CURSOR, MatchCursor, SuffixAutomaton


@dataclass
class StepResult:
    tau: int
    mask: int
    tau_cf: np.ndarray   # (M, 2) time-level destinations, -1 when invalid
    ridx_cf: np.ndarray  # (M, 2) run-level destinations, -1 when invalid
    run_index: int       # key run covering this step


@dataclass
class RouteState:
    """Matcher state owned by exactly one (batch, route) pair."""

    route_bits: int
    sam: SuffixAutomaton = field(default_factory=SuffixAutomaton)
    run_starts: list[int] = field(default_factory=list)
    run_symbols: list[int] = field(default_factory=list)
    cursor: MatchCursor = ROOT_CURSOR
    cf_cursors: dict[tuple[int, int], MatchCursor] = field(default_factory=dict)
    last_query_symbol: int | None = None
    steps: int = 0


def map_run_to_time(p: int, run_starts: list[int], t: int) -> int:
    """Start time of the run after run p, or -1 when absent or not < t."""
    nxt = p + 1
    if nxt < len(run_starts) and run_starts[nxt] < t:
        return run_starts[nxt]
    return -1


def _destination(state: RouteState, cursor: MatchCursor, t: int) -> tuple[int, int]:
    p = state.sam.recent_endpos(cursor)
    if p is None:
        return -1, -1
    tau = map_run_to_time(p, state.run_starts, t)
    return (tau, p + 1) if tau >= 0 else (-1, -1)


def route_step(state: RouteState, key_symbol: int, query_symbol: int, t: int) -> StepResult:
    """Feed one (key, query) symbol pair at time t."""
    alphabet = 1 << state.route_bits
    if not (0 <= key_symbol < alphabet and 0 <= query_symbol < alphabet):
        raise InputError(f"symbol out of range for M={state.route_bits}")
    if t != state.steps:
        raise InputError(f"expected step {state.steps}, got t={t}")
    state.steps += 1

    if not state.run_symbols or state.run_symbols[-1] != key_symbol:
        state.run_symbols.append(key_symbol)
        state.run_starts.append(t)
        state.sam.extend(key_symbol)

    if query_symbol != state.last_query_symbol:
        pre = state.cursor
        state.cursor = state.sam.match_advance(pre, query_symbol)
        state.cf_cursors = {}
        for j in range(state.route_bits):
            for u in (0, 1):
                forced = (query_symbol & ~(1 << j)) | (u << j)
                if forced == query_symbol:
                    state.cf_cursors[(j, u)] = state.cursor
                else:
                    state.cf_cursors[(j, u)] = state.sam.match_advance(pre, forced)
        state.last_query_symbol = query_symbol

    tau, _ = _destination(state, state.cursor, t)
    m = state.route_bits
    tau_cf = np.full((m, 2), -1, dtype=np.int64)
    ridx_cf = np.full((m, 2), -1, dtype=np.int64)
    for (j, u), cur in state.cf_cursors.items():
        tau_cf[j, u], ridx_cf[j, u] = _destination(state, cur, t)
    return StepResult(tau, int(tau >= 0), tau_cf, ridx_cf, len(state.run_starts) - 1)


@dataclass
class RetrievalOutput:
    """Batched retrieval results plus everything the backward pass needs."""

    tau: np.ndarray              # (B, T, R) int64, -1 when invalid
    mask: np.ndarray             # (B, T, R) uint8
    tau_cf: np.ndarray           # (B, T, R, M, 2) int64
    ridx_cf: np.ndarray          # (B, T, R, M, 2) int64
    run_start_of_time: np.ndarray  # (B, T, R) int64: key run covering t
    run_starts: list             # [b][r] -> list of run start times
    route_bits: int


def default_workers() -> int:
    env = os.environ.get("ROSA_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def batch_retrieve(
    q_syms: np.ndarray,
    k_syms: np.ndarray,
    route_bits: int,
    workers: int | None = None,
    engine: str = "auto",
) -> RetrievalOutput:
    """Run route_step over t for every (b, r) independently.

    ``engine`` selects the pure-Python reference ("python") or the compiled
    batch kernel ("numba"); "auto" prefers the kernel. Outputs are
    bit-identical across engines and worker counts.
    """
    if q_syms.shape != k_syms.shape:
        raise ConfigurationError(
            f"query/key stream shapes differ: {q_syms.shape} vs {k_syms.shape}"
        )
    if q_syms.ndim != 3:
        raise ConfigurationError(f"expected B x T x R streams, got {q_syms.shape}")
    alphabet = 1 << route_bits
    for name, arr in (("query", q_syms), ("key", k_syms)):
        if arr.size and (arr.min() < 0 or arr.max() >= alphabet):
            raise InputError(f"{name} symbols out of range for M={route_bits}")

    if engine == "auto":
        engine = "numba" if route_bits <= 8 else "python"
    if engine == "numba":
        from .fastretrieval import batch_retrieve_numba

        return batch_retrieve_numba(q_syms, k_syms, route_bits, workers)
    if engine != "python":
        raise ConfigurationError(f"unknown engine {engine!r}")

    batch, steps, routes = q_syms.shape
    m = route_bits
    tau = np.full((batch, steps, routes), -1, dtype=np.int64)
    tau_cf = np.full((batch, steps, routes, m, 2), -1, dtype=np.int64)
    ridx_cf = np.full((batch, steps, routes, m, 2), -1, dtype=np.int64)
    run_of_t = np.zeros((batch, steps, routes), dtype=np.int64)
    run_starts: list[list[list[int]]] = [[None] * routes for _ in range(batch)]

    for b in range(batch):
        for r in range(routes):
            state = RouteState(route_bits=m)
            for t in range(steps):
                res = route_step(state, int(k_syms[b, t, r]), int(q_syms[b, t, r]), t)
                tau[b, t, r] = res.tau
                tau_cf[b, t, r] = res.tau_cf
                ridx_cf[b, t, r] = res.ridx_cf
                run_of_t[b, t, r] = res.run_index
            run_starts[b][r] = list(state.run_starts)

    return RetrievalOutput(
        tau=tau,
        mask=(tau >= 0).astype(np.uint8),
        tau_cf=tau_cf,
        ridx_cf=ridx_cf,
        run_start_of_time=run_of_t,
        run_starts=run_starts,
        route_bits=m,
    )
