"""Functional fixed-point LSTM layer and its double-precision reference.

Weight matrices are bias-folded: each gate keeps one raw Q8.8 matrix whose
columns are ``[W_x zero-padded to P | W_h | b]``. The vector side gets a unity
element appended so the MAC adds the bias as its last product.

This is the golden model the streaming simulator in :mod:`lstmq88.dataflow`
has to match bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fixq
from .pwl import Activation, Tables, eval_array

ONE = fixq.SCALE  # raw Q8.8 unity


class DimensionError(ValueError):
    """Operand shapes do not agree."""


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GateParams:
    """Bias-folded gate weights, shape ``H x (P + H + 1)``, raw Q8.8."""

    w_combined: np.ndarray
    activation: Activation
    hidden: int
    padded_input: int

    def __post_init__(self) -> None:
        h, p = self.hidden, self.padded_input
        if self.w_combined.shape != (h, p + h + 1):
            raise DimensionError(
                f"combined matrix has shape {self.w_combined.shape}, expected {(h, p + h + 1)}"
            )
        if p < h:
            raise DimensionError("padded input size must be at least the hidden size")

    @classmethod
    def from_blocks(cls, w_x, w_h, b, activation: Activation | str, padded_input: int | None = None):
        """Assemble from raw ``W_x`` (H x I), ``W_h`` (H x H) and ``b`` (H)."""
        w_x = np.asarray(w_x, dtype=np.int64)
        w_h = np.asarray(w_h, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64).reshape(-1)
        hidden, n_in = w_x.shape
        if w_h.shape != (hidden, hidden) or b.shape != (hidden,):
            raise DimensionError("W_h must be H x H and b length H")
        p = max(n_in, hidden) if padded_input is None else padded_input
        if p < n_in:
            raise DimensionError("padded input size smaller than the input size")
        w = np.zeros((hidden, p + hidden + 1), dtype=np.int64)
        w[:, :n_in] = w_x
        w[:, p:p + hidden] = w_h
        w[:, -1] = b
        return cls(w, Activation(activation), hidden, p)

    @property
    def w_x(self) -> np.ndarray:
        return self.w_combined[:, :self.padded_input]

    @property
    def w_h(self) -> np.ndarray:
        return self.w_combined[:, self.padded_input:self.padded_input + self.hidden]

    @property
    def bias(self) -> np.ndarray:
        return self.w_combined[:, -1]


GATE_NAMES = ("i", "f", "o", "c")
GATE_ACTIVATIONS = {
    "i": Activation.SIGMOID,
    "f": Activation.SIGMOID,
    "o": Activation.SIGMOID,
    "c": Activation.TANH,
}


@dataclass(frozen=True)
class LayerParams:
    gate_i: GateParams
    gate_f: GateParams
    gate_o: GateParams
    gate_c: GateParams
    input_size: int

    def __post_init__(self) -> None:
        gates = self.gates()
        shapes = {(g.hidden, g.padded_input) for g in gates.values()}
        if len(shapes) != 1:
            raise DimensionError("all four gates must share H and P")
        for name, g in gates.items():
            if g.activation is not GATE_ACTIVATIONS[name]:
                raise ValueError(f"gate {name} must use {GATE_ACTIVATIONS[name].value}")
        if self.input_size > self.padded_input:
            raise DimensionError("input size exceeds padded input size")

    @property
    def hidden(self) -> int:
        return self.gate_i.hidden

    @property
    def padded_input(self) -> int:
        return self.gate_i.padded_input

    def gates(self) -> dict[str, GateParams]:
        return {"i": self.gate_i, "f": self.gate_f, "o": self.gate_o, "c": self.gate_c}

    @classmethod
    def from_float(cls, layer: "FloatLayer") -> "LayerParams":
        gates = {
            name: GateParams.from_blocks(
                fixq.encode_array(layer.w_x[name]),
                fixq.encode_array(layer.w_h[name]),
                fixq.encode_array(layer.b[name]),
                GATE_ACTIVATIONS[name],
            )
            for name in GATE_NAMES
        }
        return cls(gates["i"], gates["f"], gates["o"], gates["c"], layer.input_size)


@dataclass(frozen=True)
class ProjectionParams:
    """Output projection ``V x (H + 1)``, raw Q8.8, bias in the last column."""

    w: np.ndarray

    @property
    def vocab_size(self) -> int:
        return self.w.shape[0]

    @property
    def hidden(self) -> int:
        return self.w.shape[1] - 1

    @classmethod
    def from_blocks(cls, w, b) -> "ProjectionParams":
        w = np.asarray(w, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64).reshape(-1, 1)
        if b.shape[0] != w.shape[0]:
            raise DimensionError("projection bias length must equal its row count")
        return cls(np.hstack([w, b]))


@dataclass
class LstmState:
    """Raw Q8.8 cell and hidden vectors; steps overwrite them in place."""

    c: np.ndarray
    h: np.ndarray

    @classmethod
    def zeros(cls, hidden: int) -> "LstmState":
        return cls(np.zeros(hidden, dtype=np.int64), np.zeros(hidden, dtype=np.int64))

    def copy(self) -> "LstmState":
        return LstmState(self.c.copy(), self.h.copy())


@dataclass
class GateOutputs:
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    c: np.ndarray  # candidate cell (c-tilde)


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------

def _as_raw(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.int64)
    if v.ndim != 1:
        raise DimensionError(f"{name} must be a vector")
    return v


def extend_unity(v) -> np.ndarray:
    return np.append(np.asarray(v, dtype=np.int64), ONE)


def matvec_bias(w, v) -> np.ndarray:
    """Bias-folded matrix-vector product, one reset MAC per row, Acc32 raw out."""
    w = np.asarray(w, dtype=np.int64)
    v = _as_raw(v, "v")
    if w.ndim != 2 or w.shape[1] != v.shape[0] + 1:
        raise DimensionError(f"matrix width {w.shape[-1]} does not fit vector length {v.shape[0]} + 1")
    return fixq.mac_rows(w, extend_unity(v))


def gate_split(g: GateParams, x_pad, h_prev) -> tuple[np.ndarray, np.ndarray]:
    """The two MAC accumulators of a gate: ``[W_x | b] . [x | 1]`` and ``W_h . h``."""
    x_pad = _as_raw(x_pad, "x_pad")
    h_prev = _as_raw(h_prev, "h_prev")
    if x_pad.shape[0] != g.padded_input or h_prev.shape[0] != g.hidden:
        raise DimensionError(
            f"gate expects x of {g.padded_input} and h of {g.hidden}, "
            f"got {x_pad.shape[0]} and {h_prev.shape[0]}"
        )
    w_xb = np.hstack([g.w_x, g.bias[:, None]])
    acc_x = fixq.mac_rows(w_xb, extend_unity(x_pad))
    acc_h = fixq.mac_rows(g.w_h, h_prev)
    return acc_x, acc_h


def gate_preactivation(g: GateParams, x_pad, h_prev) -> np.ndarray:
    acc_x, acc_h = gate_split(g, x_pad, h_prev)
    return fixq.acc_add_array(acc_x, acc_h)


def gate_preactivation_fused(g: GateParams, x_pad, h_prev) -> np.ndarray:
    """Single MAC over ``[x_pad | h_prev | 1]``; equals the split form below saturation."""
    return matvec_bias(g.w_combined, np.concatenate([_as_raw(x_pad, "x_pad"), _as_raw(h_prev, "h_prev")]))


def gate_eval(g: GateParams, x_pad, h_prev, table) -> np.ndarray:
    if table.kind is not g.activation:
        raise ValueError(f"table is {table.kind.value}, gate needs {g.activation.value}")
    return eval_array(table, fixq.rescale_array(gate_preactivation(g, x_pad, h_prev)))


def ewise_stage(i, f, o, ctilde, c_prev, tanh_table) -> tuple[np.ndarray, np.ndarray]:
    """Cell and hidden update: ``c = f*c_prev + i*ctilde``, ``h = o*tanh(c)``."""
    c = fixq.rescale_array(fixq.acc_add_array(fixq.mul_array(f, c_prev), fixq.mul_array(i, ctilde)))
    h = fixq.rescale_array(fixq.mul_array(o, eval_array(tanh_table, c)))
    return c, h


def pad_input(x, padded: int) -> np.ndarray:
    x = _as_raw(x, "x")
    if x.shape[0] > padded:
        raise DimensionError(f"input of length {x.shape[0]} exceeds padded size {padded}")
    out = np.zeros(padded, dtype=np.int64)
    out[:x.shape[0]] = x
    return out


def compute_gates(params: LayerParams, x, state: LstmState, tables: Tables) -> GateOutputs:
    x_pad = pad_input(x, params.padded_input)
    if state.h.shape[0] != params.hidden or state.c.shape[0] != params.hidden:
        raise DimensionError("state size does not match the layer's hidden size")
    out = {
        name: gate_eval(g, x_pad, state.h, tables.for_kind(g.activation))
        for name, g in params.gates().items()
    }
    return GateOutputs(**out)


def lstm_step(params: LayerParams, x, state: LstmState, tables: Tables,
              trace: list | None = None) -> LstmState:
    """Advance one timestep, overwriting ``state`` in place and returning it.

    When ``trace`` is a list, the step's :class:`GateOutputs` is appended to it.
    """
    gates = compute_gates(params, x, state, tables)
    c, h = ewise_stage(gates.i, gates.f, gates.o, gates.c, state.c, tables.tanh)
    state.c[:] = c
    state.h[:] = h
    if trace is not None:
        trace.append(gates)
    return state


def projection(p: ProjectionParams, h) -> np.ndarray:
    """Final output layer at full Acc32 precision (logits)."""
    h = _as_raw(h, "h")
    if h.shape[0] != p.hidden:
        raise DimensionError(f"projection expects h of {p.hidden}, got {h.shape[0]}")
    return matvec_bias(p.w, h)


# ---------------------------------------------------------------------------
# Double-precision reference
# ---------------------------------------------------------------------------

@dataclass
class FloatLayer:
    """Real-valued layer weights keyed by gate name (``i``, ``f``, ``o``, ``c``)."""

    w_x: dict[str, np.ndarray]
    w_h: dict[str, np.ndarray]
    b: dict[str, np.ndarray]

    @property
    def input_size(self) -> int:
        return self.w_x["i"].shape[1]

    @property
    def hidden(self) -> int:
        return self.w_x["i"].shape[0]

    @classmethod
    def from_fixed(cls, layer: LayerParams) -> "FloatLayer":
        gates = layer.gates()
        n = layer.input_size
        return cls(
            {k: fixq.decode_array(g.w_x[:, :n]) for k, g in gates.items()},
            {k: fixq.decode_array(g.w_h) for k, g in gates.items()},
            {k: fixq.decode_array(g.bias) for k, g in gates.items()},
        )


@dataclass
class FloatState:
    c: np.ndarray
    h: np.ndarray

    @classmethod
    def zeros(cls, hidden: int) -> "FloatState":
        return cls(np.zeros(hidden), np.zeros(hidden))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def float_oracle_step(layer: FloatLayer, x, state: FloatState) -> FloatState:
    x = np.asarray(x, dtype=np.float64)
    pre = {k: layer.w_x[k] @ x + layer.w_h[k] @ state.h + layer.b[k] for k in GATE_NAMES}
    i, f, o = _sigmoid(pre["i"]), _sigmoid(pre["f"]), _sigmoid(pre["o"])
    ctilde = np.tanh(pre["c"])
    c = f * state.c + i * ctilde
    return FloatState(c, o * np.tanh(c))


# ---------------------------------------------------------------------------
# Error metrics
# ---------------------------------------------------------------------------

PCT_EPS = 1e-6


@dataclass
class ErrorStats:
    mean: float
    best: float
    worst: float
    per_step: np.ndarray = field(repr=False)


def step_pct_error(fixed_raw, reference) -> float:
    approx = fixq.decode_array(fixed_raw)
    reference = np.asarray(reference, dtype=np.float64)
    scale = max(float(np.mean(np.abs(reference))), PCT_EPS)
    return float(np.mean(np.abs(approx - reference)) / scale * 100.0)


def avg_pct_error(fixed_seq, float_seq) -> ErrorStats:
    """Per-timestep mean absolute error relative to the mean reference magnitude, in percent."""
    fixed_seq = list(fixed_seq)
    float_seq = list(float_seq)
    if not fixed_seq:
        raise ValueError("error metric needs at least one timestep")
    if len(fixed_seq) != len(float_seq):
        raise DimensionError("sequences differ in length")
    errs = []
    for fx, fl in zip(fixed_seq, float_seq):
        if np.shape(fx) != np.shape(fl):
            raise DimensionError("vectors differ in dimension")
        errs.append(step_pct_error(fx, fl))
    errs = np.array(errs)
    return ErrorStats(float(errs.mean()), float(errs.min()), float(errs.max()), errs)
