"""ROSA: suffix-automaton retrieval with trainable injection."""

from .injection import InjectionParams, gather_values, inject_forward, mix_pre_attn
from .mqar import EpochMetrics, MqarConfig, calibrate_retrieval, generate, run_experiment
from .retrieval import RetrievalOutput, RouteState, batch_retrieve, map_run_to_time, route_step
from .sam import MatchCursor, SuffixAutomaton
from .tinymodel import Adam, ModelConfig, TinyModel, cosine_lr, train_step
from .symbolizer import (
    AdapterParams,
    pack_bits,
    project_and_binarize,
    read_symbol_stream,
    unpack_symbol,
    unpack_symbols,
    write_symbol_stream,
)

__all__ = [
    "Adam",
    "AdapterParams",
    "EpochMetrics",
    "InjectionParams",
    "MatchCursor",
    "ModelConfig",
    "MqarConfig",
    "RetrievalOutput",
    "RouteState",
    "SuffixAutomaton",
    "TinyModel",
    "batch_retrieve",
    "calibrate_retrieval",
    "cosine_lr",
    "generate",
    "gather_values",
    "inject_forward",
    "map_run_to_time",
    "mix_pre_attn",
    "pack_bits",
    "project_and_binarize",
    "read_symbol_stream",
    "route_step",
    "run_experiment",
    "train_step",
    "unpack_symbol",
    "unpack_symbols",
    "write_symbol_stream",
]
