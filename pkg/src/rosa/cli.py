"""Command-line entry point: experiments, benchmarks, checks, file retrieval.

Subcommands: ``mqar`` (train a model variant on the recall task),
``retrieve`` (symbol-stream files in, destination tensors out),
``bench-sam`` (single-automaton step-time scaling), ``gradcheck``
(analytic-vs-finite-difference gradient suite), ``collision-stats`` and
``stability-stats`` (Monte-Carlo symbol statistics against closed-form
bounds).

Exit codes: 0 on success, 2 on configuration errors, 1 when a run
completes but its check fails.

Each subcommand accepts ``--config FILE`` pointing at a JSON object whose
keys are flag names with dashes replaced by underscores. Precedence:
explicit flags override the config file, which overrides built-in
defaults.
"""

from __future__ import annotations

import argparse
import gc
import json
import sys
import time

import numpy as np

from .errors import ConfigurationError, InputError
from .gradcheck import run_gradcheck
from .mqar import MqarConfig, run_experiment
from .oracle import collision_estimate, stability_estimate
from .retrieval import batch_retrieve
from .sam import SuffixAutomaton, MatchCursor
from .symbolizer import read_symbol_stream, write_i32_tensor
from .tinymodel import ModelConfig

EXIT_OK = 0
EXIT_FAILED_CHECK = 1
EXIT_CONFIG = 2


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge flag values over a JSON config file over built-in defaults."""
    config = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                config = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config file: {exc}") from exc
        unknown = set(config) - set(defaults)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    merged = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
        elif key in config:
            merged[key] = type(default)(config[key]) if default is not None else config[key]
        else:
            merged[key] = default
    return merged


# --- mqar -----------------------------------------------------------------

MQAR_DEFAULTS = {
    "mode": "post_attn",
    "dim": 128,
    "seq_len": 512,
    "window": 32,
    "route_bits": 4,
    "epochs": 10,
    "seed": 0,
    "pairs": 32,
    "key_vocab": 64,
    "value_vocab": 64,
    "sequences": 576,
    "out": None,
    "csv_out": None,
}


def _cmd_mqar(args) -> int:
    opt = _resolve(args, MQAR_DEFAULTS)
    task = MqarConfig(
        seq_len=opt["seq_len"],
        num_pairs=opt["pairs"],
        key_vocab=opt["key_vocab"],
        value_vocab=opt["value_vocab"],
        num_sequences=opt["sequences"],
        seed=opt["seed"],
    )
    model = ModelConfig(
        dim=opt["dim"],
        vocab=task.vocab,
        window=opt["window"],
        route_bits=opt["route_bits"],
        mode=opt["mode"],
        seed=opt["seed"],
    )
    model.check()
    metrics = run_experiment(
        model,
        task,
        epochs=opt["epochs"],
        jsonl_path=opt["out"],
        csv_path=opt["csv_out"],
        log=lambda msg: print(msg, flush=True),
    )
    final = metrics[-1]
    print(f"final epoch={final.epoch} loss={final.loss:.4f} val_acc={final.val_acc:.1f}")
    return EXIT_OK


# --- retrieve -------------------------------------------------------------

RETRIEVE_DEFAULTS = {
    "queries": None,
    "keys": None,
    "out_prefix": "retrieval",
    "workers": None,
    "engine": "auto",
}


def _cmd_retrieve(args) -> int:
    opt = _resolve(args, RETRIEVE_DEFAULTS)
    if not opt["queries"] or not opt["keys"]:
        raise ConfigurationError("--queries and --keys are required")
    q_syms, m_q = read_symbol_stream(opt["queries"])
    k_syms, m_k = read_symbol_stream(opt["keys"])
    if m_q != m_k:
        raise ConfigurationError(f"route width mismatch: {m_q} vs {m_k}")
    out = batch_retrieve(q_syms, k_syms, m_q, workers=opt["workers"], engine=opt["engine"])
    prefix = opt["out_prefix"]
    write_i32_tensor(f"{prefix}.tau.bin", out.tau, m_q)
    write_i32_tensor(f"{prefix}.mask.bin", out.mask.astype(np.int32), m_q)
    write_i32_tensor(f"{prefix}.taucf.bin", out.tau_cf, m_q)
    write_i32_tensor(f"{prefix}.ridxcf.bin", out.ridx_cf, m_q)
    b, t, r = out.tau.shape
    print(f"wrote {prefix}.{{tau,mask,taucf,ridxcf}}.bin for B={b} T={t} R={r} M={m_q}")
    return EXIT_OK


# --- bench-sam ------------------------------------------------------------

BENCH_DEFAULTS = {
    "min_len": 4096,
    "max_len": 1 << 20,
    "route_bits": 4,
    "seed": 0,
    "repeats": 3,
    "max_ratio": 2.5,
    "out": None,
}


BENCH_SEGMENT = 32768


def _bench_once(symbols: list[int]) -> list[float]:
    """Build+match over `symbols`, returning CPU seconds per segment.

    CPU time, not wall time: the subject is the automaton's compute cost on
    one core, and wall clock on a shared host folds in scheduler preemption
    that has nothing to do with the algorithm. Segment-level timings let the
    caller take a per-segment minimum across repeats, so a load burst has to
    cover every replay of a segment to survive into the reported total.
    """
    # cyclic garbage collection scans every live automaton node, which turns
    # the amortized O(1) step into O(T) at million-node scale; the automaton
    # allocates monotonically, so collection is pointless during the loop
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        sam = SuffixAutomaton()
        cursor = MatchCursor(state=0, length=0)
        extend, advance = sam.extend, sam.match_advance
        times = []
        for lo in range(0, len(symbols), BENCH_SEGMENT):
            chunk = symbols[lo : lo + BENCH_SEGMENT]
            start = time.process_time()
            for s in chunk:
                extend(s)
                cursor = advance(cursor, s)
            times.append(time.process_time() - start)
        return times
    finally:
        if gc_was_enabled:
            gc.enable()


def _cmd_bench_sam(args) -> int:
    opt = _resolve(args, BENCH_DEFAULTS)
    if opt["min_len"] < 1 or opt["max_len"] < opt["min_len"]:
        raise ConfigurationError("need 1 <= min-len <= max-len")
    rng = np.random.default_rng(opt["seed"])
    alphabet = 1 << opt["route_bits"]
    lengths = []
    length = opt["min_len"]
    while length <= opt["max_len"]:
        lengths.append(length)
        length *= 2
    streams = [[int(s) for s in rng.integers(0, alphabet, size=n)] for n in lengths]
    # interleave the repeats (whole passes over every size) so that a
    # transient load burst cannot poison all timings of a single size and
    # fake a superlinear doubling ratio; the per-size minimum then comes
    # from the quietest pass
    best: list[list[float]] = [[] for _ in lengths]
    for _ in range(opt["repeats"]):
        for i, symbols in enumerate(streams):
            times = _bench_once(symbols)
            if best[i]:
                best[i] = [min(a, b) for a, b in zip(best[i], times)]
            else:
                best[i] = times
    totals = [sum(segs) for segs in best]
    rows = []
    for i, n in enumerate(lengths):
        ratio = totals[i] / totals[i - 1] if i else float("nan")
        rows.append((n, totals[i], ratio))

    lines = ["T,seconds,ns_per_step,ratio_vs_half"]
    for length, seconds, ratio in rows:
        lines.append(f"{length},{seconds:.6f},{1e9 * seconds / length:.1f},{ratio:.3f}")
    csv = "\n".join(lines) + "\n"
    if opt["out"]:
        with open(opt["out"], "w") as fh:
            fh.write(csv)
    print(csv, end="")

    worst = max((r for _, _, r in rows[1:]), default=0.0)
    if worst > opt["max_ratio"]:
        print(f"FAIL: doubling ratio {worst:.3f} exceeds {opt['max_ratio']}")
        return EXIT_FAILED_CHECK
    print(f"PASS: worst doubling ratio {worst:.3f} <= {opt['max_ratio']}")
    return EXIT_OK


# --- gradcheck ------------------------------------------------------------

GRADCHECK_DEFAULTS = {"seed": 0}


def _cmd_gradcheck(args) -> int:
    opt = _resolve(args, GRADCHECK_DEFAULTS)
    report = run_gradcheck(seed=opt["seed"])
    failed = False
    for name, (err, tol, passed) in sorted(report.items()):
        status = "PASS" if passed else "FAIL"
        print(f"{status} {name}: max_rel_err={err:.3e} tol={tol:.0e}")
        failed |= not passed
    return EXIT_FAILED_CHECK if failed else EXIT_OK


# --- collision / stability stats -----------------------------------------

COLLISION_DEFAULTS = {"route_bits": 4, "samples": 200_000, "seed": 0}
STABILITY_DEFAULTS = {"route_bits": 4, "delta": 0.01, "samples": 200_000, "seed": 0}


def _three_sigma(p: float, n: int) -> float:
    return 3.0 * float(np.sqrt(p * (1.0 - p) / n))


def _cmd_collision_stats(args) -> int:
    opt = _resolve(args, COLLISION_DEFAULTS)
    m, n = opt["route_bits"], opt["samples"]
    est = collision_estimate(m, n, seed=opt["seed"])
    bound = 2.0 ** -m  # collision floor of an M-bit alphabet
    passed = est >= bound - _three_sigma(bound, n)
    print(json.dumps({"M": m, "estimate": est, "bound": bound, "pass": passed}))
    return EXIT_OK if passed else EXIT_FAILED_CHECK


def _cmd_stability_stats(args) -> int:
    opt = _resolve(args, STABILITY_DEFAULTS)
    m, n, delta = opt["route_bits"], opt["samples"], opt["delta"]
    if delta < 0:
        raise ConfigurationError("delta must be >= 0")
    est = stability_estimate(m, delta, n, seed=opt["seed"])
    bound = delta * m  # union bound: per-bit flip prob <= 2 * delta * (1/2)
    passed = est <= bound + _three_sigma(min(bound, 0.5), n)
    print(json.dumps({"M": m, "delta": delta, "estimate": est, "bound": bound, "pass": passed}))
    return EXIT_OK if passed else EXIT_FAILED_CHECK


# --- parser ---------------------------------------------------------------

def _add_config_flag(sub):
    sub.add_argument("--config", help="JSON file of flag defaults")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rosa")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("mqar", help="train a recall-task model variant")
    p.add_argument("--mode", choices=["post_attn", "pre_attn", "window_only", "global"])
    p.add_argument("--dim", type=int)
    p.add_argument("--seq-len", type=int, dest="seq_len")
    p.add_argument("--window", type=int)
    p.add_argument("--route-bits", type=int, dest="route_bits")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--pairs", type=int)
    p.add_argument("--key-vocab", type=int, dest="key_vocab")
    p.add_argument("--value-vocab", type=int, dest="value_vocab")
    p.add_argument("--sequences", type=int)
    p.add_argument("--out", help="JSONL metrics path")
    p.add_argument("--csv-out", dest="csv_out", help="CSV metrics path")
    _add_config_flag(p)
    p.set_defaults(func=_cmd_mqar)

    p = subs.add_parser("retrieve", help="file-level batched retrieval")
    p.add_argument("--queries", help="query symbol-stream file")
    p.add_argument("--keys", help="key symbol-stream file")
    p.add_argument("--out-prefix", dest="out_prefix")
    p.add_argument("--workers", type=int)
    p.add_argument("--engine", choices=["auto", "python", "numba"])
    _add_config_flag(p)
    p.set_defaults(func=_cmd_retrieve)

    p = subs.add_parser("bench-sam", help="single-automaton step-time scaling")
    p.add_argument("--min-len", type=int, dest="min_len")
    p.add_argument("--max-len", type=int, dest="max_len")
    p.add_argument("--route-bits", type=int, dest="route_bits")
    p.add_argument("--seed", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--max-ratio", type=float, dest="max_ratio")
    p.add_argument("--out", help="CSV output path")
    _add_config_flag(p)
    p.set_defaults(func=_cmd_bench_sam)

    p = subs.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    p.add_argument("--seed", type=int)
    _add_config_flag(p)
    p.set_defaults(func=_cmd_gradcheck)

    p = subs.add_parser("collision-stats", help="symbol collision rate vs bound")
    p.add_argument("--route-bits", type=int, dest="route_bits")
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int)
    _add_config_flag(p)
    p.set_defaults(func=_cmd_collision_stats)

    p = subs.add_parser("stability-stats", help="two-view mismatch rate vs bound")
    p.add_argument("--route-bits", type=int, dest="route_bits")
    p.add_argument("--delta", type=float)
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int)
    _add_config_flag(p)
    p.set_defaults(func=_cmd_stability_stats)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (ConfigurationError, InputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
