"""Q8.8 fixed-point arithmetic with 32-bit (Q16.16) accumulation.

Scalars are wrapped in :class:`Q88` / :class:`Acc32`; vectors and matrices are
plain numpy ``int64`` arrays holding raw integers so the LSTM kernels stay
vectorized. Every operation saturates instead of wrapping.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Iterator

import numpy as np

FRAC_BITS = 8
SCALE = 1 << FRAC_BITS
ACC_SCALE = SCALE * SCALE

Q88_MIN = -(1 << 15)
Q88_MAX = (1 << 15) - 1
ACC_MIN = -(1 << 31)
ACC_MAX = (1 << 31) - 1

TRUNCATE = "truncate"
NEAREST = "nearest"

_rescale_mode = TRUNCATE


@dataclass(frozen=True, order=True)
class Q88:
    """16-bit signed word, value = raw / 256."""

    raw: int

    def __post_init__(self) -> None:
        if not Q88_MIN <= self.raw <= Q88_MAX:
            raise ValueError(f"Q88 raw value {self.raw} out of 16-bit range")

    def __float__(self) -> float:
        return self.raw / SCALE


@dataclass(frozen=True, order=True)
class Acc32:
    """32-bit signed accumulator, value = raw / 65536 (Q16.16)."""

    raw: int

    def __post_init__(self) -> None:
        if not ACC_MIN <= self.raw <= ACC_MAX:
            raise ValueError(f"Acc32 raw value {self.raw} out of 32-bit range")

    def __float__(self) -> float:
        return self.raw / ACC_SCALE


def get_rescale_mode() -> str:
    return _rescale_mode


def set_rescale_mode(mode: str) -> None:
    """Select the 32->16 rescale rounding: ``"truncate"`` (default) or ``"nearest"``."""
    global _rescale_mode
    if mode not in (TRUNCATE, NEAREST):
        raise ValueError(f"unknown rescale mode {mode!r}")
    _rescale_mode = mode


@contextlib.contextmanager
def rescale_mode(mode: str) -> Iterator[None]:
    previous = _rescale_mode
    set_rescale_mode(mode)
    try:
        yield
    finally:
        set_rescale_mode(previous)


# ---------------------------------------------------------------------------
# Scalar operations
# ---------------------------------------------------------------------------

def encode(x: float) -> Q88:
    """Round-to-nearest-even of ``x * 256``, saturated to 16 bits."""
    if not np.isfinite(x):
        raise ValueError("encode() needs a finite value")
    return Q88(int(np.clip(np.rint(x * SCALE), Q88_MIN, Q88_MAX)))


def decode(q: Q88) -> float:
    return q.raw / SCALE


def mul(a: Q88, b: Q88) -> Acc32:
    # |a.raw * b.raw| <= 2**30, always fits
    return Acc32(a.raw * b.raw)


def acc_add(a: Acc32, b: Acc32) -> Acc32:
    return Acc32(min(max(a.raw + b.raw, ACC_MIN), ACC_MAX))


def widen(q: Q88) -> Acc32:
    """Re-express a Q8.8 word in Q16.16 (exact)."""
    return Acc32(q.raw << FRAC_BITS)


def rescale(a: Acc32) -> Q88:
    """Q16.16 -> Q8.8: arithmetic shift right by 8, then saturate."""
    return Q88(int(rescale_array(np.int64(a.raw))))


# ---------------------------------------------------------------------------
# Vectorized operations on raw integer arrays
# ---------------------------------------------------------------------------

def encode_array(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("encode_array() needs finite values")
    # np.rint rounds half to even
    return np.clip(np.rint(x * SCALE), Q88_MIN, Q88_MAX).astype(np.int64)


def decode_array(raw) -> np.ndarray:
    return np.asarray(raw, dtype=np.int64) / SCALE


def sat16(raw) -> np.ndarray:
    return np.clip(raw, Q88_MIN, Q88_MAX)


def sat32(raw) -> np.ndarray:
    return np.clip(raw, ACC_MIN, ACC_MAX)


def rescale_array(acc) -> np.ndarray:
    acc = np.asarray(acc, dtype=np.int64)
    if _rescale_mode == NEAREST:
        acc = acc + (1 << (FRAC_BITS - 1))
    return sat16(acc >> FRAC_BITS)


def acc_add_array(a, b) -> np.ndarray:
    return sat32(np.asarray(a, dtype=np.int64) + np.asarray(b, dtype=np.int64))


def mul_array(a, b) -> np.ndarray:
    return np.asarray(a, dtype=np.int64) * np.asarray(b, dtype=np.int64)


def mac_rows(weights, vectors) -> np.ndarray:
    """Saturating multiply-accumulate along the last axis, one accumulator per row.

    ``weights`` has shape ``(rows, n)``; ``vectors`` broadcasts against it.
    Products are accumulated left to right with a 32-bit saturating adder that
    starts from zero on every row, exactly like a MAC that is reset at each
    output element.
    """
    products = mul_array(weights, vectors)
    if products.ndim == 1:
        products = products[None, :]
    if products.shape[-1] == 0:
        return np.zeros(products.shape[0], dtype=np.int64)
    # int64 partial sums are exact: |product| <= 2**30 and n is small
    partial = np.cumsum(products, axis=-1)
    out = partial[:, -1].copy()
    overflowed = np.any((partial > ACC_MAX) | (partial < ACC_MIN), axis=-1)
    for r in np.flatnonzero(overflowed):
        acc = 0
        for p in products[r].tolist():
            acc = min(max(acc + p, ACC_MIN), ACC_MAX)
        out[r] = acc
    return out
