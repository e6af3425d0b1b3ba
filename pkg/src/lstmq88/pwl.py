"""13-segment piecewise-linear tanh / sigmoid in Q8.8.

Each segment is a chord ``y = a*x + b`` over a uniform slice of the covered
input range. Evaluation mirrors a chain of pipelined comparator + MAC stages:
the first segment whose range contains ``x`` computes the output, inputs below
the table give ``clamp_lo`` and inputs at or above its end give ``clamp_hi``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

import numpy as np

from . import fixq
from .fixq import Q88

N_SEGMENTS = 13


class Activation(str, enum.Enum):
    TANH = "tanh"
    SIGMOID = "sigmoid"

    def reference(self, x):
        """Double-precision reference of the function."""
        x = np.asarray(x, dtype=np.float64)
        if self is Activation.TANH:
            return np.tanh(x)
        return 0.5 * (1.0 + np.tanh(0.5 * x))


# covered input range and saturation outputs per function
_DOMAIN = {Activation.TANH: (-4.0, 4.0), Activation.SIGMOID: (-6.0, 6.0)}
_ASYMPTOTES = {Activation.TANH: (-1.0, 1.0), Activation.SIGMOID: (0.0, 1.0)}


@dataclass(frozen=True)
class LineSegment:
    a: Q88
    b: Q88
    x_lo: Q88
    x_hi: Q88

    def __post_init__(self) -> None:
        if not self.x_lo < self.x_hi:
            raise ValueError("segment range must satisfy x_lo < x_hi")

    def contains(self, x: Q88) -> bool:
        return self.x_lo <= x < self.x_hi


@dataclass(frozen=True)
class PwlTable:
    kind: Activation
    segments: tuple[LineSegment, ...]
    clamp_lo: Q88
    clamp_hi: Q88

    def __post_init__(self) -> None:
        if len(self.segments) != N_SEGMENTS:
            raise ValueError(f"table needs exactly {N_SEGMENTS} segments")
        for left, right in zip(self.segments, self.segments[1:]):
            if left.x_hi != right.x_lo:
                raise ValueError("segments must be contiguous and ascending")

    def raw_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(a, b, x_lo, x_hi) raw columns."""
        cols = [[getattr(s, f).raw for s in self.segments] for f in ("a", "b", "x_lo", "x_hi")]
        return tuple(np.array(c, dtype=np.int64) for c in cols)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "clamp_lo": self.clamp_lo.raw,
            "clamp_hi": self.clamp_hi.raw,
            "segments": [[s.a.raw, s.b.raw, s.x_lo.raw, s.x_hi.raw] for s in self.segments],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PwlTable":
        segs = tuple(LineSegment(*(Q88(v) for v in row)) for row in data["segments"])
        return cls(Activation(data["kind"]), segs, Q88(data["clamp_lo"]), Q88(data["clamp_hi"]))

    def dumps(self) -> str:
        return json.dumps(self.to_dict())


def build_table(kind: Activation | str) -> PwlTable:
    """Chord table over 13 uniform intervals of the function's covered range.

    Breakpoints are quantized first, the slope is the chord slope between the
    quantized breakpoints, and the intercept is chosen after slope
    quantization so the line still hits the chord at the segment midpoint.
    That keeps the slope rounding error proportional to the half-width of a
    segment instead of to ``|x|``.
    """
    kind = Activation(kind)
    lo, hi = _DOMAIN[kind]
    f = kind.reference
    edges = [fixq.encode(lo + (hi - lo) * k / N_SEGMENTS) for k in range(N_SEGMENTS + 1)]
    segments = []
    for x0, x1 in zip(edges, edges[1:]):
        u0, u1 = fixq.decode(x0), fixq.decode(x1)
        y0, y1 = float(f(u0)), float(f(u1))
        a = fixq.encode((y1 - y0) / (u1 - u0))
        mid = 0.5 * (u0 + u1)
        b = fixq.encode(0.5 * (y0 + y1) - fixq.decode(a) * mid)
        segments.append(LineSegment(a, b, x0, x1))
    clamp_lo, clamp_hi = (fixq.encode(v) for v in _ASYMPTOTES[kind])
    return PwlTable(kind, tuple(segments), clamp_lo, clamp_hi)


def _line(seg: LineSegment, x: Q88) -> Q88:
    acc = fixq.acc_add(fixq.mul(seg.a, x), fixq.widen(seg.b))
    return fixq.rescale(acc)


def evaluate(table: PwlTable, x: Q88) -> Q88:
    """Scalar evaluation by sequential comparator scan (reference path)."""
    if x < table.segments[0].x_lo:
        return table.clamp_lo
    for seg in table.segments:
        if seg.contains(x):
            y = _line(seg, x)
            # the line output is confined to the function's range
            return min(max(y, table.clamp_lo), table.clamp_hi)
    return table.clamp_hi


def eval_array(table: PwlTable, x) -> np.ndarray:
    """Vectorized evaluation over raw Q8.8 integers.

    Selects the segment by binary search over the breakpoints; contiguity makes
    that selection identical to the sequential first-match scan in :func:`evaluate`.
    """
    x = np.asarray(x, dtype=np.int64)
    a, b, x_lo, x_hi = table.raw_arrays()
    idx = np.searchsorted(x_lo, x, side="right") - 1
    inside = (idx >= 0) & (x < x_hi[-1])
    safe = np.clip(idx, 0, N_SEGMENTS - 1)
    acc = fixq.acc_add_array(fixq.mul_array(a[safe], x), b[safe] << fixq.FRAC_BITS)
    y = np.clip(fixq.rescale_array(acc), table.clamp_lo.raw, table.clamp_hi.raw)
    y = np.where(inside, y, np.where(x < x_lo[0], table.clamp_lo.raw, table.clamp_hi.raw))
    return y.astype(np.int64)


ALL_INPUTS = np.arange(fixq.Q88_MIN, fixq.Q88_MAX + 1, dtype=np.int64)


def max_abs_error(table: PwlTable) -> float:
    """Worst absolute error against the double-precision function over all 65536 inputs."""
    approx = fixq.decode_array(eval_array(table, ALL_INPUTS))
    exact = table.kind.reference(fixq.decode_array(ALL_INPUTS))
    return float(np.max(np.abs(approx - exact)))


def format_table(table: PwlTable) -> str:
    """One ``a b x_lo x_hi`` line of raw integers per segment."""
    return "\n".join(f"{s.a.raw} {s.b.raw} {s.x_lo.raw} {s.x_hi.raw}" for s in table.segments)


@dataclass(frozen=True)
class Tables:
    tanh: PwlTable
    sigmoid: PwlTable

    def for_kind(self, kind: Activation) -> PwlTable:
        return self.tanh if kind is Activation.TANH else self.sigmoid


def default_tables() -> Tables:
    return Tables(build_table(Activation.TANH), build_table(Activation.SIGMOID))

