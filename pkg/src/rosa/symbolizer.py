"""Binary discretization of hidden states into multi-route symbol streams.

Hidden states are layer-normalized, projected through per-stream adapter
matrices, thresholded at zero, and the resulting bits are packed route-wise
(M bits per route) into integer symbols in [0, 2^M).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputError

LN_EPS = 1e-5

STREAM_MAGIC = b"ROSA"
STREAM_VERSION = 1


@dataclass
class AdapterParams:
    """Projection matrices and LN scale for the q/k/v symbol adapters.

    All matrices are C x C. ``ln_scale`` may be None to bypass the adapter
    layer norm (used by reference tests; training always normalizes).
    """

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    ln_scale: np.ndarray | None = None

    def check(self, dim: int) -> None:
        for name, w in (("w_q", self.w_q), ("w_k", self.w_k), ("w_v", self.w_v)):
            if w.shape != (dim, dim):
                raise ConfigurationError(
                    f"{name} must be {dim}x{dim}, got {w.shape}"
                )
            if not np.all(np.isfinite(w)):
                raise ConfigurationError(f"{name} contains non-finite entries")
        if self.ln_scale is not None and self.ln_scale.shape != (dim,):
            raise ConfigurationError(
                f"ln_scale must have length {dim}, got {self.ln_scale.shape}"
            )


def layer_norm(h: np.ndarray, scale: np.ndarray | None, eps: float = LN_EPS) -> np.ndarray:
    """Standard LN over the channel axis, learnable scale, no bias."""
    mu = h.mean(axis=-1, keepdims=True)
    var = h.var(axis=-1, keepdims=True)
    u = (h - mu) / np.sqrt(var + eps)
    if scale is not None:
        u = u * scale
    return u


def project_and_binarize(h: np.ndarray, params: AdapterParams, normalize: bool = True):
    """Project hidden states and threshold-binarize each channel.

    Returns (qvec, kvec, vvec, qbit, kbit, vbit). The continuous vectors are
    retained because the backward pass needs them. The threshold is a strict
    ``> 0``: an exactly-zero activation maps to bit 0.
    """
    if h.ndim != 3:
        raise ConfigurationError(f"expected B x T x C input, got shape {h.shape}")
    dim = h.shape[-1]
    params.check(dim)
    if not np.all(np.isfinite(h)):
        raise InputError("hidden states contain non-finite entries")

    u = layer_norm(h, params.ln_scale) if normalize else h
    qvec = u @ params.w_q
    kvec = u @ params.w_k
    vvec = u @ params.w_v
    qbit = (qvec > 0).astype(np.uint8)
    kbit = (kvec > 0).astype(np.uint8)
    vbit = (vvec > 0).astype(np.uint8)
    return qvec, kvec, vvec, qbit, kbit, vbit


def pack_bits(bits: np.ndarray, route_bits: int) -> np.ndarray:
    """Pack channel bits into route symbols.

    ``bits`` has channels on the last axis; channel c corresponds to
    (route r, bit j) with c = r * route_bits + j and symbol weight 2^j.
    """
    m = int(route_bits)
    if m < 1:
        raise ConfigurationError("route width must be >= 1")
    channels = bits.shape[-1]
    if channels % m != 0:
        raise ConfigurationError(f"route width {m} does not divide C={channels}")
    routes = channels // m
    grouped = bits.reshape(*bits.shape[:-1], routes, m).astype(np.int64)
    weights = (1 << np.arange(m, dtype=np.int64))
    return (grouped * weights).sum(axis=-1)


def unpack_symbol(symbol: int, route_bits: int) -> list[int]:
    """Inverse of pack_bits for a single symbol: bit j = floor(symbol/2^j) mod 2."""
    if not 0 <= symbol < (1 << route_bits):
        raise InputError(f"symbol {symbol} out of range for M={route_bits}")
    return [(symbol >> j) & 1 for j in range(route_bits)]


def unpack_symbols(symbols: np.ndarray, route_bits: int) -> np.ndarray:
    """Vectorized unpack: (..., R) integer symbols -> (..., R, M) bits."""
    if symbols.size and (symbols.min() < 0 or symbols.max() >= (1 << route_bits)):
        raise InputError(f"symbol out of range for M={route_bits}")
    shifts = np.arange(route_bits, dtype=np.int64)
    return ((symbols[..., None].astype(np.int64) >> shifts) & 1).astype(np.uint8)


# --- symbol-stream file format -------------------------------------------
#
# Header: magic "ROSA", version u16, then B, T, R, M as little-endian u32.
# Payload: B*T*R little-endian u16 symbols in (b, t, r) order.

def write_symbol_stream(path, symbols: np.ndarray, route_bits: int) -> None:
    if symbols.ndim != 3:
        raise ConfigurationError(f"expected B x T x R symbols, got {symbols.shape}")
    if route_bits > 16:
        raise ConfigurationError("file format stores u16 symbols; M must be <= 16")
    b, t, r = symbols.shape
    with open(path, "wb") as fh:
        fh.write(STREAM_MAGIC)
        fh.write(struct.pack("<H4I", STREAM_VERSION, b, t, r, route_bits))
        fh.write(np.ascontiguousarray(symbols, dtype="<u2").tobytes())


def read_symbol_stream(path) -> tuple[np.ndarray, int]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != STREAM_MAGIC:
            raise InputError(f"bad magic {magic!r} in {path}")
        version, b, t, r, m = struct.unpack("<H4I", fh.read(18))
        if version != STREAM_VERSION:
            raise InputError(f"unsupported stream version {version}")
        data = np.frombuffer(fh.read(b * t * r * 2), dtype="<u2")
    if data.size != b * t * r:
        raise InputError(f"truncated symbol stream {path}")
    symbols = data.reshape(b, t, r).astype(np.int64)
    if symbols.size and symbols.max() >= (1 << m):
        raise InputError(f"symbol exceeds alphabet 2^{m} in {path}")
    return symbols, m


def write_i32_tensor(path, tensor: np.ndarray, route_bits: int) -> None:
    """Same header layout as the symbol stream, i32 payload.

    The header keeps (B, T, R, M); trailing axes beyond (B, T, R) - e.g. the
    (M, 2) counterfactual axes - are implied by the payload length.
    """
    b, t, r = tensor.shape[:3]
    with open(path, "wb") as fh:
        fh.write(STREAM_MAGIC)
        fh.write(struct.pack("<H4I", STREAM_VERSION, b, t, r, route_bits))
        fh.write(np.ascontiguousarray(tensor, dtype="<i4").tobytes())


def read_i32_tensor(path) -> tuple[np.ndarray, tuple[int, int, int], int]:
    """Returns (flat payload, (B, T, R), M); caller reshapes trailing axes."""
    with open(path, "rb") as fh:
        if fh.read(4) != STREAM_MAGIC:
            raise InputError(f"bad magic in {path}")
        version, b, t, r, m = struct.unpack("<H4I", fh.read(18))
        if version != STREAM_VERSION:
            raise InputError(f"unsupported stream version {version}")
        data = np.frombuffer(fh.read(), dtype="<i4")
    return data.astype(np.int32), (b, t, r), m
