"""Multi-query associative recall: data generation and training harness.

Each sequence lays out N (key, value) pairs in the prefix, filler tokens in
the middle, and the N queries in random order at the end. Keys are spelled
with two tokens -- the key token followed by its fixed check token, the
next key token cyclically -- both when a pair is written and when it is
queried, and the model is scored on the check token of each query, where it
must emit the value paired with the key just asked. The spelling is
redundant (the second token is a function of the first), so the binding
problem is unchanged; it simply gives every key a two-token surface form.
With a short attention window every answer lies far outside the window of
its query, so windowed attention alone cannot solve the task.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InputError
from .symbolizer import layer_norm
from .tinymodel import Adam, ModelConfig, TinyModel, cosine_lr, train_step

FILLER = 0


@dataclass
class MqarConfig:
    seq_len: int = 512
    num_pairs: int = 32
    key_vocab: int = 64
    value_vocab: int = 64
    num_sequences: int = 1024
    seed: int = 0

    def check(self) -> None:
        if 5 * self.num_pairs + 1 > self.seq_len:
            raise ConfigurationError("sequence too short for pairs plus queries")
        if self.num_pairs > self.key_vocab:
            raise ConfigurationError("key vocab too small for distinct keys")
        if self.key_vocab < 2:
            raise ConfigurationError("key spelling needs at least two key tokens")
        if min(self.num_pairs, self.key_vocab, self.value_vocab, self.num_sequences) < 1:
            raise ConfigurationError("all sizes must be positive")

    @property
    def vocab(self) -> int:
        # token space: filler, then keys, then values (disjoint ranges)
        return 1 + self.key_vocab + self.value_vocab

    def key_token(self, k: int) -> int:
        return 1 + k

    def check_token(self, k: int) -> int:
        # second token of key k's two-token spelling
        return 1 + (k + 1) % self.key_vocab

    def value_token(self, v: int) -> int:
        return 1 + self.key_vocab + v


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    val_acc: float


def generate(config: MqarConfig):
    """Build (tokens, targets); targets are -1 except at query check tokens.

    Layout: one unpaired leading value token, then the N pairs, each written
    as (key, check, value), then filler, then the N queries in random order,
    each written as (key, check). The target value sits on the check token
    -- the model answers on the step after reading the queried key, as an
    autoregressive model would. The leading value means every key --
    including the first -- is preceded by value content, so no prefix
    position looks like a query position to a content-based detector.
    """
    config.check()
    rng = np.random.default_rng(config.seed)
    n, t, s = config.num_pairs, config.seq_len, config.num_sequences
    kv = config.key_vocab
    tokens = np.full((s, t), FILLER, dtype=np.int64)
    targets = np.full((s, t), -1, dtype=np.int64)
    for i in range(s):
        keys = rng.choice(kv, size=n, replace=False)
        values = rng.integers(0, config.value_vocab, size=n)
        tokens[i, 0] = 1 + kv + rng.integers(0, config.value_vocab)
        tokens[i, 1 : 3 * n + 1 : 3] = 1 + keys
        tokens[i, 2 : 3 * n + 2 : 3] = 1 + (keys + 1) % kv
        tokens[i, 3 : 3 * n + 3 : 3] = 1 + kv + values
        order = rng.permutation(n)
        q_pos = np.arange(t - 2 * n, t, 2)
        tokens[i, q_pos] = 1 + keys[order]
        tokens[i, q_pos + 1] = 1 + (keys[order] + 1) % kv
        targets[i, q_pos + 1] = 1 + kv + values[order]
    return tokens, targets


def answers_outside_window(config: MqarConfig, window: int) -> bool:
    """True when every query's paired value sits outside its attention window."""
    first_query = config.seq_len - 2 * config.num_pairs
    last_value = 3 * config.num_pairs
    return last_value < first_query - window + 1


def evaluate(model: TinyModel, tokens, targets, batch_size: int = 32) -> float:
    """Percent of answer slots where argmax equals the target."""
    hits = 0
    total = 0
    for lo in range(0, tokens.shape[0], batch_size):
        tb = tokens[lo : lo + batch_size]
        gb = targets[lo : lo + batch_size]
        logits, _ = model.forward(tb)
        sel = gb >= 0
        hits += int((logits[sel].argmax(axis=-1) == gb[sel]).sum())
        total += int(sel.sum())
    return 100.0 * hits / max(total, 1)


def _fit_sign_codes(samples, signs, margin, iters=1500):
    """Fit a linear map whose outputs reproduce target signs with a margin.

    Least-squares warm start followed by hinge descent: only outputs that
    violate ``margin * sign`` keep contributing gradient, so well-separated
    rows stop moving and hard rows get the remaining capacity. The step is
    scaled by the top eigenvalue of the sample gram matrix so the descent
    stays stable whatever the activation scale.
    """
    w = np.linalg.lstsq(samples, margin * signs, rcond=None)[0]
    n = samples.shape[0]
    step = 1.0 / float(np.linalg.eigvalsh(samples.T @ samples / n)[-1])
    for _ in range(iters):
        viol = np.maximum(0.0, margin - signs * (samples @ w))
        w += step * samples.T @ (signs * viol) / n
    return w


def _sym_to_signs(sym, bits):
    """Expand per-route symbols into a per-channel sign code (route-major)."""
    n_keys, routes = sym.shape
    codes = np.zeros((n_keys, routes * bits), dtype=np.float64)
    for b in range(bits):
        codes[:, b::bits] = np.where((sym >> b) & 1, 1.0, -1.0)
    return codes


def _trail_arc_score(s):
    n = len(s)
    nxt = np.roll(s, -1)
    loops = int((s == nxt).sum())
    arcs = s * (s.max() + 1) + nxt
    dups = n - len(np.unique(arcs))
    return 8 * loops + dups


def _trail_symbols(n_keys, n_syms, rng, iters=3000):
    """One route's symbol map: key X -> s(X), tuned as a closed trail.

    A key spelled (X, X+1) is looked up by the two-run symbol sequence
    (s(X), s(X+1)), so what matters per route is the cyclic sequence of
    arcs (s(X), s(X+1)): an arc that appears for two different keys makes
    them aliases on this route, and s(X) == s(X+1) folds the two runs into
    one. Starting from a load-balanced shuffle, random swaps hill-climb
    the count of such defects; with a big enough alphabet the result is
    usually a perfect closed trail (all arcs distinct, no loops).
    """
    base = np.repeat(np.arange(1, n_syms + 1), n_keys // n_syms)
    extra = 1 + rng.choice(n_syms, size=n_keys - len(base), replace=False)
    s = rng.permutation(np.concatenate([base, extra]))
    score = _trail_arc_score(s)
    for _ in range(iters):
        if score == 0:
            break
        i, j = rng.integers(0, n_keys, size=2)
        if s[i] == s[j]:
            continue
        s[i], s[j] = s[j], s[i]
        trial = _trail_arc_score(s)
        if trial <= score:
            score = trial
        else:
            s[i], s[j] = s[j], s[i]
    return s


def _trail_key_codes(n_keys, routes, bits, rng):
    """Per-route sign codes for two-token key spellings.

    Key symbols come from the alphabet {1 .. 2^bits - 2}: symbol 0 is
    reserved for background content and the top symbol for value tokens,
    so in the key stream a key's two-symbol spelling (key run, check run)
    can never be imitated by the junction between one pair and the next --
    those junctions always pass through a value run. Aliasing is then
    confined to keys assigned the same arc by :func:`_trail_symbols`,
    which makes arcs distinct whenever the alphabet allows, and any
    leftover aliases fall on different key pairs per route.
    """
    if bits < 2:
        raise ConfigurationError("key codes need at least 2 route bits")
    n_syms = (1 << bits) - 2
    sym = np.stack([_trail_symbols(n_keys, n_syms, rng) for _ in range(routes)], axis=1)
    return _sym_to_signs(sym, bits)


def calibrate_retrieval(
    model: TinyModel,
    config: MqarConfig,
    calib_tokens,
    *,
    collapse_strength: float = 4.0,
    inject_scale: float = 1.0,
    marker_scale: float = 2.0,
    decode_seed: float = 0.1,
    code_seed: int = 5,
) -> None:
    """Initialize the retrieval adapters of ``model`` for the recall task.

    The final layer's adapters are fit on normalized activations from a
    calibration forward pass so that:

    * the query adapter maps each token to a fixed per-route symbol:
      key tokens to trail codes (:func:`_trail_key_codes`), value tokens to
      the top symbol, filler to symbol 0,
    * the key adapter reproduces the query codes in the key/value prefix but
      collapses them to symbol 0 in the query region — otherwise a query's
      own key symbols would be their own most recent match,
    * the value adapter gives every token a random sign code so the symbol
      gathered at the matched position identifies the value token.

    Every map depends only on the token at a position, which is what a
    linear adapter can compute reliably: with content-only windowed
    attention there is no mechanism that would let a position's symbol
    depend on *which neighbor* it has. The two-token key spelling is what
    turns that constraint into a two-run lookup: a query's (key, check)
    tokens emit the symbol sequence (s(X), s(X+1)), which occurs in the key
    stream only where the pair for key X was written, so the match lands on
    that pair's value run rather than on whichever single-symbol collider
    occurred most recently.

    Before the calibration pass the token embeddings get a marker component:
    value tokens move one way along a random direction, key and filler
    tokens the other. Attention then carries a "values present in window"
    signal into every hidden state, which is what lets a linear detector
    tell prefix positions (windows containing values) from query positions
    (windows containing only keys and filler) even deep inside the query
    block.

    The query-region collapse direction is fit with an asymmetric objective:
    response >= 1 on query positions (hinge) while the mean-square response
    on prefix positions is pushed toward zero. A one-sided objective does
    not work — a negative response, scaled by the collapse strength, flips
    prefix bits upward just as surely as a positive one flips them down.

    Retrieval heads are set to emit ``±inject_scale`` per unmasked channel
    so the read-out is linearly decodable from the first step.
    """
    cfg = model.config
    if not cfg.uses_retrieval:
        raise ConfigurationError("model mode has no retrieval branch")
    c = cfg.dim
    bits = cfg.route_bits
    routes = c // bits
    n, t = config.num_pairs, config.seq_len
    rng = np.random.default_rng(code_seed)

    marker = rng.standard_normal(c)
    marker /= np.linalg.norm(marker)
    emb = model.params["embed"]
    first_value = 1 + config.key_vocab
    emb[:first_value] += (marker_scale * marker).astype(model.dtype)
    emb[first_value : config.vocab] -= (marker_scale * marker).astype(model.dtype)

    _, cache = model.forward(calib_tokens)
    last = cfg.layers - 1
    ones = np.ones(c, dtype=np.float32)
    u = layer_norm(cache["blocks"][last]["h_in"].astype(np.float32), ones)
    samples = u.reshape(-1, c)
    toks = np.asarray(calib_tokens)
    pos_flat = np.tile(np.arange(t), toks.shape[0])

    key_codes = _trail_key_codes(config.key_vocab, routes, bits, rng)
    value_codes = rng.choice([-1.0, 1.0], size=(cfg.vocab, c))

    # per-token query/key symbol targets: filler 0, keys their trail code,
    # values (and the sentinel) the all-ones top symbol
    token_signs = np.full((cfg.vocab, c), -1.0)
    token_signs[1 : 1 + config.key_vocab] = key_codes
    token_signs[1 + config.key_vocab : config.vocab] = 1.0
    q_signs = token_signs[toks].reshape(-1, c)
    v_signs = value_codes[toks].reshape(-1, c)

    # the filler span is one giant repeated token; keep only a slice of it so
    # the code fits below stay cheap at long sequence lengths
    keep = (pos_flat < 3 * n + 1) | (pos_flat >= t - 2 * n)
    filler_rows = np.flatnonzero(~keep)
    keep_rows = np.concatenate(
        [np.flatnonzero(keep), rng.choice(filler_rows, size=min(len(filler_rows), 2 * n * toks.shape[0]), replace=False)]
    )
    samples = samples[keep_rows]
    pos_flat = pos_flat[keep_rows]

    w_q = _fit_sign_codes(samples, q_signs[keep_rows].astype(np.float32), margin=2.5)
    w_v = _fit_sign_codes(samples, v_signs[keep_rows].astype(np.float32), margin=1.5)

    in_query = pos_flat >= t - 2 * n
    in_prefix = pos_flat < 3 * n + 1
    u_query = samples[in_query]
    u_prefix = samples[in_prefix]
    gram = u_prefix.T @ u_prefix / len(u_prefix) + 0.01 * np.eye(c)
    det = np.linalg.solve(gram, u_query.mean(axis=0))
    det /= np.sqrt(np.mean((u_query @ det) ** 2))
    det_step = 0.25 / float(np.linalg.eigvalsh(gram)[-1])
    for _ in range(4000):
        short = (u_query @ det < 1.0).astype(np.float32)
        det -= det_step * (
            -u_query.T @ short / len(u_query)
            + 4.0 * u_prefix.T @ (u_prefix @ det) / len(u_prefix)
        )
        det /= max(1.0, np.sqrt(np.mean((u_query @ det) ** 2)))

    dt = model.dtype
    model.params[f"b{last}.ad_q"][...] = w_q.astype(dt)
    model.params[f"b{last}.ad_k"][...] = (
        w_q - collapse_strength * np.outer(det, ones)
    ).astype(dt)
    model.params[f"b{last}.ad_v"][...] = w_v.astype(dt)
    model.params[f"b{last}.e0"][...] = -inject_scale
    model.params[f"b{last}.e1"][...] = inject_scale
    if cfg.mode == "pre_attn":
        model.params[f"b{last}.alpha0"][...] = -2.0

    # Seed the read-out: adding each value token's sign code to its head
    # column turns the injected route bits into a vote count over values,
    # so the head starts as a matched filter instead of from noise.
    value_ids = np.arange(first_value, config.vocab)
    model.params["head"][:, value_ids] += (
        decode_seed * value_codes[value_ids].T
    ).astype(dt)


def run_experiment(
    model_config: ModelConfig,
    mqar_config: MqarConfig,
    epochs: int = 10,
    batch_size: int = 16,
    val_fraction: float = 0.125,
    lr_max: float = 1e-3,
    lr_min: float = 1e-4,
    head_lr: float = 1e-2,
    residual_damp: float = 0.3,
    calib_sequences: int = 64,
    stop_at_acc: float | None = None,
    jsonl_path=None,
    csv_path=None,
    dtype=np.float32,
    log=None,
) -> list[EpochMetrics]:
    """Train one model variant on the recall task and record per-epoch metrics.

    Window-only and global variants train end to end with ``lr_max`` cosine
    decayed to ``lr_min``. Retrieval variants instead get their adapters and
    read-out heads set by :func:`calibrate_retrieval` on a slice of the
    training split; only the output head (plus the fusion gate, when there
    is one) then trains, at ``head_lr``, so the calibrated symbol streams
    stay fixed while the head learns to decode them. ``residual_damp``
    scales down the block output projections of retrieval variants at
    initialization, which keeps calibration-time activations close to the
    token embeddings they were fit on. ``stop_at_acc`` ends training early
    once validation accuracy reaches the given percentage.
    """
    mqar_config.check()
    if model_config.vocab < mqar_config.vocab:
        raise ConfigurationError("model vocab smaller than task vocab")
    if model_config.mode == "window_only" and not answers_outside_window(
        mqar_config, model_config.window
    ):
        raise ConfigurationError("window covers the answers; task is not cross-segment")

    tokens, targets = generate(mqar_config)
    n_val = max(1, int(round(val_fraction * tokens.shape[0])))
    train_tok, val_tok = tokens[:-n_val], tokens[-n_val:]
    train_tgt, val_tgt = targets[:-n_val], targets[-n_val:]

    model = TinyModel(model_config, dtype=dtype)
    if model_config.uses_retrieval:
        for i in range(model_config.layers):
            model.params[f"b{i}.wo"] *= residual_damp
            model.params[f"b{i}.mlp_out"] *= residual_damp
        calibrate_retrieval(
            model, mqar_config, train_tok[: min(calib_sequences, train_tok.shape[0])]
        )
        trainable = {"head"}
        if model_config.mode == "pre_attn":
            trainable |= {f"b{i}.alpha0" for i in range(model_config.layers)}
        scales = {nm: (1.0 if nm in trainable else 0.0) for nm in model.parameter_names()}
        opt = Adam(model, lr_scales=scales)
        lr_hi, lr_lo = head_lr, head_lr / 10.0
    else:
        opt = Adam(model)
        lr_hi, lr_lo = lr_max, lr_min
    order_rng = np.random.default_rng(mqar_config.seed + 1)
    steps_per_epoch = int(np.ceil(train_tok.shape[0] / batch_size))
    total_steps = epochs * steps_per_epoch

    records = []
    metrics: list[EpochMetrics] = []
    step = 0
    try:
        for epoch in range(1, epochs + 1):
            perm = order_rng.permutation(train_tok.shape[0])
            losses = []
            for lo in range(0, perm.size, batch_size):
                idx = perm[lo : lo + batch_size]
                lr = cosine_lr(step, total_steps, lr_hi, lr_lo)
                losses.append(train_step(model, opt, train_tok[idx], train_tgt[idx], lr=lr))
                step += 1
            acc = evaluate(model, val_tok, val_tgt, batch_size)
            em = EpochMetrics(epoch=epoch, loss=float(np.mean(losses)), val_acc=acc)
            metrics.append(em)
            records.append(
                {
                    "epoch": em.epoch,
                    "loss": em.loss,
                    "val_acc": em.val_acc,
                    "mode": model_config.mode,
                    "seed": mqar_config.seed,
                }
            )
            if log is not None:
                log(records[-1])
            if stop_at_acc is not None and acc >= stop_at_acc:
                break
    except InputError as exc:
        records.append({"error": str(exc), "mode": model_config.mode, "seed": mqar_config.seed})
        _write_logs(records, metrics, jsonl_path, csv_path)
        raise
    _write_logs(records, metrics, jsonl_path, csv_path)
    return metrics


def _write_logs(records, metrics, jsonl_path, csv_path) -> None:
    if jsonl_path is not None:
        with Path(jsonl_path).open("w") as fh:
            for rec in records:
                fh.write(json.dumps(rec) + "\n")
    if csv_path is not None:
        with Path(csv_path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss", "val_acc"])
            for em in metrics:
                writer.writerow([em.epoch, f"{em.loss:.6f}", f"{em.val_acc:.2f}"])
