import numpy as np
import pytest

from rosa.errors import InputError
from rosa.oracle import (
    NaiveRouteMatcher,
    _occurrences_end,
    brute_match,
    collision_estimate,
    quantized_attention,
    stability_estimate,
    successor_shift_check,
)
from rosa.retrieval import batch_retrieve

SAMPLES = 200_000


def binomial_3sigma(p, n):
    return 3.0 * np.sqrt(p * (1.0 - p) / n)


# --- collision rate -------------------------------------------------------

@pytest.mark.parametrize("m", [2, 4, 8])
def test_collision_rate_matches_alphabet_bound(m):
    p = 2.0 ** -m
    est = collision_estimate(m, SAMPLES, seed=m)
    assert abs(est - p) <= binomial_3sigma(p, SAMPLES)


def test_collision_seed_determinism():
    assert collision_estimate(4, 1000, seed=7) == collision_estimate(4, 1000, seed=7)


def test_degenerate_stream_always_collides():
    # constant symbols collide with probability one
    a = np.zeros(1000, dtype=np.int64)
    assert float(np.mean(a == a.copy())) == 1.0


# --- two-view stability ---------------------------------------------------

@pytest.mark.parametrize("m", [2, 4, 8])
def test_mismatch_rate_within_union_bound(m):
    delta = 0.01
    est = stability_estimate(m, delta, SAMPLES, seed=m)
    # per-bit flip probability <= 2 * delta * f_max = delta; union over bits
    bound = delta * m
    assert est <= bound + binomial_3sigma(min(bound, 0.5), SAMPLES)


def test_zero_noise_views_agree():
    assert stability_estimate(4, 0.0, 10_000, seed=0) == 0.0


def test_mismatch_monotone_in_noise():
    low = stability_estimate(4, 0.005, SAMPLES, seed=3)
    high = stability_estimate(4, 0.05, SAMPLES, seed=3)
    assert low < high


# --- quantized-attention limit --------------------------------------------

def softmax_attention(values, match_set, beta):
    scores = np.array([beta if i in match_set else 0.0 for i in range(len(values))])
    w = np.exp(scores - scores.max())
    w /= w.sum()
    return w @ values


@pytest.mark.parametrize("seed", range(10))
def test_closed_form_equals_direct_softmax(seed):
    rng = np.random.default_rng(seed)
    t = int(rng.integers(2, 40))
    values = rng.normal(size=(t, 3))
    match_set = {int(i) for i in rng.choice(t, size=int(rng.integers(1, t + 1)), replace=False)}
    beta = float(rng.uniform(0.1, 5.0))
    got = quantized_attention(values, match_set, beta)
    np.testing.assert_allclose(got, softmax_attention(values, match_set, beta), atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_large_beta_limit_is_uniform_average(seed):
    rng = np.random.default_rng(100 + seed)
    t = int(rng.integers(2, 60))
    values = rng.normal(size=(t, 4))
    match_set = {int(i) for i in rng.choice(t, size=int(rng.integers(1, t + 1)), replace=False)}
    got = quantized_attention(values, match_set, beta=50.0)
    uniform = values[sorted(match_set)].mean(axis=0)
    np.testing.assert_allclose(got, uniform, atol=1e-6)


def test_empty_match_set_is_plain_average():
    values = np.arange(8.0).reshape(4, 2)
    np.testing.assert_allclose(quantized_attention(values, set(), 50.0), values.mean(axis=0), atol=1e-12)


def test_empty_history_rejected():
    with pytest.raises(InputError):
        quantized_attention(np.zeros((0, 2)), set(), 1.0)


# --- successor-shift equivalence with the retrieval engine ----------------

def distinct_neighbor_stream(rng, steps, alphabet):
    # adjacent symbols always differ, so every run has length one
    out = [int(rng.integers(0, alphabet))]
    while len(out) < steps:
        s = int(rng.integers(0, alphabet))
        if s != out[-1]:
            out.append(s)
    return out


@pytest.mark.parametrize("seed", range(12))
def test_engine_destination_is_most_recent_successor(seed):
    rng = np.random.default_rng(300 + seed)
    steps = int(rng.integers(8, 48))
    alphabet = int(rng.integers(3, 8))
    keys = distinct_neighbor_stream(rng, steps, alphabet)
    queries = distinct_neighbor_stream(rng, steps, alphabet)
    q = np.array(keys if seed % 3 == 0 else queries, dtype=np.int64).reshape(1, steps, 1)
    k = np.array(keys, dtype=np.int64).reshape(1, steps, 1)
    out = batch_retrieve(q, k, 3, engine="python")
    values = rng.normal(size=(steps, 2))

    matcher = NaiveRouteMatcher()
    for t in range(steps):
        matcher.step(int(k[0, t, 0]), int(q[0, t, 0]), t, 3)
        tau = int(out.tau[0, t, 0])
        if not matcher.matched:
            assert tau == -1
            continue
        # runs have length one, so run indices coincide with positions
        match_set = set(_occurrences_end(keys[: t + 1], matcher.matched))
        if max(match_set) + 1 >= t:
            # most recent occurrence has no strictly-earlier successor
            assert tau == -1
            continue
        assert successor_shift_check(values, match_set, 50.0, tau, t=t)


def test_brute_match_worked_example():
    # keys 2,1,2,1: suffix "1,2,1" ends at 3; "2,1" ends at 1 and 3
    assert brute_match([2, 1, 2, 1], [1, 2, 1]) == (3, 3)
    assert brute_match([2, 1, 2, 1], [9, 2, 1]) == (2, 3)
    assert brute_match([2, 1, 2, 1], [9, 9, 9]) == (0, None)
