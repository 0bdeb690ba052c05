"""Forward injection path: destination gather, (e0, e1, W_out), and the
pre-attention mixing gate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .retrieval import RetrievalOutput
from .symbolizer import unpack_symbols


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass
class InjectionParams:
    e0: np.ndarray      # (C,)
    e1: np.ndarray      # (C,)
    w_out: np.ndarray   # (C, C)
    alpha0: np.ndarray  # (C,) pre-attn gate logits

    @property
    def delta(self) -> np.ndarray:
        return self.e1 - self.e0

    @classmethod
    def zero_init(cls, dim: int, alpha0: float = -6.0, dtype=np.float64):
        """e0 = e1 = 0, W_out = I: the injection is exactly zero at init."""
        return cls(
            e0=np.zeros(dim, dtype=dtype),
            e1=np.zeros(dim, dtype=dtype),
            w_out=np.eye(dim, dtype=dtype),
            alpha0=np.full(dim, alpha0, dtype=dtype),
        )


def gather_values(out: RetrievalOutput, v_syms: np.ndarray) -> np.ndarray:
    """read(b,t,r) = mask * v_syms(b, tau(b,t,r), r); 0 when tau = -1."""
    if v_syms.shape != out.tau.shape:
        raise ConfigurationError(
            f"value stream shape {v_syms.shape} != retrieval shape {out.tau.shape}"
        )
    steps = out.tau.shape[1]
    t_axis = np.arange(steps).reshape(1, steps, 1)
    if np.any(out.tau >= t_axis):
        raise AssertionError("retrieval produced a non-causal destination")
    idx = np.clip(out.tau, 0, None)
    gathered = np.take_along_axis(v_syms, idx, axis=1)
    return gathered * out.mask.astype(v_syms.dtype)


def inject_forward(read_syms: np.ndarray, mask: np.ndarray, params: InjectionParams, route_bits: int):
    """Build the injection tensor from retrieved value symbols.

    Returns (inj, cache) where cache holds (y, bits, mask_c) for the
    backward pass. y(b,t,c) = mask * (e0_c + delta_c * bit); inj = W_out y.
    """
    dim = params.e0.shape[0]
    batch, steps, routes = read_syms.shape
    if routes * route_bits != dim:
        raise ConfigurationError(
            f"R={routes} routes of width {route_bits} do not fill C={dim}"
        )
    bits = unpack_symbols(read_syms, route_bits).reshape(batch, steps, dim)
    mask_c = np.repeat(mask, route_bits, axis=-1).astype(params.e0.dtype)
    y = mask_c * (params.e0 + params.delta * bits)
    inj = y @ params.w_out.T
    return inj, (y, bits, mask_c)


def mix_pre_attn(h: np.ndarray, inj: np.ndarray, alpha0: np.ndarray) -> np.ndarray:
    """Per-channel gated mix (1 - sigmoid(alpha0)) * h + sigmoid(alpha0) * inj."""
    if h.shape != inj.shape:
        raise ConfigurationError(f"shape mismatch {h.shape} vs {inj.shape}")
    alpha = sigmoid(alpha0)
    return (1.0 - alpha) * h + alpha * inj
