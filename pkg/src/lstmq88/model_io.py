"""Model files, vocabulary, sampling and character-by-character generation.

Model file layout (all integers little-endian)::

    magic        8 bytes  b"LSTMQ88\\0"
    version      u32      1
    layer_count  u32
    dims         layer_count x (input u32, hidden u32)
    vocab_size   u32
    vocab        vocab_size UTF-8 encoded characters, back to back
    weights      float32 little-endian, row-major, in this order:
                   per layer, per gate in (i, f, o, c): W_x (H x I), W_h (H x H), b (H)
                   then projection W (V x H_last), b (V)

The file carries float weights; quantization to Q8.8 happens on load.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import fixq
from .dataflow import EngineConfig, LstmEngine, PerfCounters
from .lstm import (
    GATE_NAMES,
    FloatLayer,
    FloatState,
    GateOutputs,
    LayerParams,
    LstmState,
    ProjectionParams,
    avg_pct_error,
    ErrorStats,
    float_oracle_step,
    lstm_step,
    projection,
)
from .pwl import Tables, default_tables

MAGIC = b"LSTMQ88\0"
VERSION = 1

# 65-symbol character set of the tiny-Shakespeare corpus
SHAKESPEARE_CHARS = "\n !$&',-.3:;?" + "ABCDEFGHIJKLMNOPQRSTUVWXYZ" + "abcdefghijklmnopqrstuvwxyz"


class ModelLoadError(ValueError):
    pass


class BadMagicError(ModelLoadError):
    pass


class TruncatedModelError(ModelLoadError):
    pass


class DimMismatchError(ModelLoadError):
    pass


class UnknownCharacterError(KeyError):
    pass


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Vocab:
    chars: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(set(self.chars)) != len(self.chars):
            raise ValueError("vocabulary characters must be unique")
        if any(len(c) != 1 for c in self.chars):
            raise ValueError("vocabulary entries must be single characters")
        object.__setattr__(self, "_index", {c: k for k, c in enumerate(self.chars)})

    @classmethod
    def from_string(cls, s: str) -> "Vocab":
        return cls(tuple(s))

    def __len__(self) -> int:
        return len(self.chars)

    def index(self, ch: str) -> int:
        try:
            return self._index[ch]
        except KeyError:
            raise UnknownCharacterError(f"character {ch!r} is not in the vocabulary") from None

    def char(self, idx: int) -> str:
        return self.chars[idx]


def one_hot(vocab: Vocab, ch: str) -> np.ndarray:
    v = np.zeros(len(vocab), dtype=np.int64)
    v[vocab.index(ch)] = fixq.SCALE
    return v


def one_hot_float(vocab: Vocab, ch: str) -> np.ndarray:
    v = np.zeros(len(vocab))
    v[vocab.index(ch)] = 1.0
    return v


# ---------------------------------------------------------------------------
# Model containers
# ---------------------------------------------------------------------------

@dataclass
class FloatModel:
    layers: list[FloatLayer]
    proj_w: np.ndarray
    proj_b: np.ndarray
    vocab: Vocab

    def validate(self) -> None:
        if not self.layers:
            raise DimMismatchError("model needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.input_size != prev.hidden:
                raise DimMismatchError("layer input size must equal the previous hidden size")
        if self.proj_w.shape != (len(self.vocab), self.layers[-1].hidden):
            raise DimMismatchError(
                f"projection is {self.proj_w.shape}, expected {(len(self.vocab), self.layers[-1].hidden)}"
            )
        if self.proj_b.shape != (len(self.vocab),):
            raise DimMismatchError("projection bias length must equal the vocabulary size")


@dataclass
class CharModel:
    """A loaded model: quantized layers plus the float weights they came from."""

    layers: list[LayerParams]
    projection: ProjectionParams
    vocab: Vocab
    reference: FloatModel

    @property
    def hidden(self) -> int:
        return self.layers[-1].hidden

    @property
    def padded_input(self) -> int:
        return max(layer.padded_input for layer in self.layers)

    def engine_config(self, **kwargs) -> EngineConfig:
        hidden = {layer.hidden for layer in self.layers}
        if len(hidden) != 1:
            raise DimMismatchError("the engine needs one hidden size across layers")
        return EngineConfig(hidden=self.hidden, padded_input=self.padded_input, **kwargs)


def quantize(fm: FloatModel) -> CharModel:
    fm.validate()
    layers = [LayerParams.from_float(layer) for layer in fm.layers]
    proj = ProjectionParams.from_blocks(fixq.encode_array(fm.proj_w), fixq.encode_array(fm.proj_b))
    return CharModel(layers, proj, fm.vocab, fm)


def dequantize(model: CharModel) -> FloatModel:
    w = fixq.decode_array(model.projection.w)
    return FloatModel(
        [FloatLayer.from_fixed(layer) for layer in model.layers],
        w[:, :-1], w[:, -1], model.vocab,
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def serialize(fm: FloatModel) -> bytes:
    fm.validate()
    parts = [MAGIC, struct.pack("<II", VERSION, len(fm.layers))]
    for layer in fm.layers:
        parts.append(struct.pack("<II", layer.input_size, layer.hidden))
    parts.append(struct.pack("<I", len(fm.vocab)))
    parts.append("".join(fm.vocab.chars).encode("utf-8"))
    for layer in fm.layers:
        for g in GATE_NAMES:
            for arr in (layer.w_x[g], layer.w_h[g], layer.b[g]):
                parts.append(np.asarray(arr, dtype="<f4").tobytes())
    parts.append(np.asarray(fm.proj_w, dtype="<f4").tobytes())
    parts.append(np.asarray(fm.proj_b, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedModelError(f"file ends at byte {len(self.data)}, needed {self.pos + n}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def floats(self, *shape: int) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(self.take(4 * n), dtype="<f4").astype(np.float64).reshape(shape)

    def utf8_chars(self, count: int) -> str:
        out = []
        for _ in range(count):
            lead = self.take(1)[0]
            if lead < 0x80:
                width = 1
            elif lead >> 5 == 0b110:
                width = 2
            elif lead >> 4 == 0b1110:
                width = 3
            elif lead >> 3 == 0b11110:
                width = 4
            else:
                raise ModelLoadError("vocabulary is not valid UTF-8")
            raw = bytes([lead]) + self.take(width - 1)
            try:
                out.append(raw.decode("utf-8"))
            except UnicodeDecodeError as exc:
                raise ModelLoadError("vocabulary is not valid UTF-8") from exc
        return "".join(out)


def parse(data: bytes) -> FloatModel:
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise BadMagicError("not an LSTMQ88 model file")
    version = r.u32()
    if version != VERSION:
        raise ModelLoadError(f"unsupported model version {version}")
    n_layers = r.u32()
    if n_layers == 0:
        raise DimMismatchError("model declares zero layers")
    dims = [(r.u32(), r.u32()) for _ in range(n_layers)]
    vocab_size = r.u32()
    vocab = Vocab.from_string(r.utf8_chars(vocab_size))
    layers = []
    for n_in, hid in dims:
        w_x, w_h, b = {}, {}, {}
        for g in GATE_NAMES:
            w_x[g] = r.floats(hid, n_in)
            w_h[g] = r.floats(hid, hid)
            b[g] = r.floats(hid)
        layers.append(FloatLayer(w_x, w_h, b))
    proj_w = r.floats(vocab_size, dims[-1][1])
    proj_b = r.floats(vocab_size)
    if r.pos != len(data):
        raise DimMismatchError(f"{len(data) - r.pos} bytes beyond the declared sizes")
    fm = FloatModel(layers, proj_w, proj_b, vocab)
    fm.validate()
    return fm


def load_model(data: bytes) -> CharModel:
    """Parse model bytes and quantize the weights to Q8.8."""
    try:
        return quantize(parse(data))
    except ValueError as exc:
        if isinstance(exc, ModelLoadError):
            raise
        raise ModelLoadError(str(exc)) from exc


def load_model_file(path) -> CharModel:
    with open(path, "rb") as fh:
        return load_model(fh.read())


def save_model(model: CharModel) -> bytes:
    """Write the quantized weights (exactly representable in float32)."""
    return serialize(dequantize(model))


def random_float_model(seed: int = 0, hidden: int = 128, n_layers: int = 2,
                       vocab: Vocab | None = None, scale: float = 0.5) -> FloatModel:
    """Uniform random weights in ``[-scale, scale]``."""
    vocab = vocab or Vocab.from_string(SHAKESPEARE_CHARS)
    rng = np.random.default_rng(seed)
    layers = []
    n_in = len(vocab)
    for _ in range(n_layers):
        w_x = {g: rng.uniform(-scale, scale, (hidden, n_in)) for g in GATE_NAMES}
        w_h = {g: rng.uniform(-scale, scale, (hidden, hidden)) for g in GATE_NAMES}
        b = {g: rng.uniform(-scale, scale, hidden) for g in GATE_NAMES}
        layers.append(FloatLayer(w_x, w_h, b))
        n_in = hidden
    proj_w = rng.uniform(-scale, scale, (len(vocab), hidden))
    proj_b = rng.uniform(-scale, scale, len(vocab))
    return FloatModel(layers, proj_w, proj_b, vocab)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

class SampleMode(str, enum.Enum):
    ARGMAX = "argmax"
    MULTINOMIAL = "multinomial"


@dataclass(frozen=True)
class SamplerConfig:
    mode: SampleMode = SampleMode.ARGMAX
    temperature: float = 1.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", SampleMode(self.mode))
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")

    def make_rng(self) -> np.random.Generator:
        return np.random.default_rng(self.rng_seed)


def sample_next(logits, cfg: SamplerConfig, rng: np.random.Generator | None = None) -> int:
    """Pick the next character index from raw Acc32 logits.

    Argmax returns the smallest index holding the maximum. Multinomial draws
    from a double-precision softmax of the decoded logits over ``temperature``.
    """
    logits = np.asarray(logits, dtype=np.int64)
    if logits.size == 0:
        raise ValueError("no logits to sample from")
    if cfg.mode is SampleMode.ARGMAX:
        return int(np.argmax(logits))
    if rng is None:
        rng = cfg.make_rng()
    z = logits / fixq.ACC_SCALE / cfg.temperature
    p = np.exp(z - z.max())
    p /= p.sum()
    idx = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
    return min(idx, logits.size - 1)


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

class Backend(str, enum.Enum):
    FUNCTIONAL = "functional"
    DATAFLOW = "dataflow"


@dataclass
class GenerationResult:
    text: str
    inputs: list[int]  # character index fed at each step
    h_history: list[list[np.ndarray]] = field(default_factory=list)  # per step, per layer
    c_history: list[list[np.ndarray]] = field(default_factory=list)
    gate_trace: list[GateOutputs] = field(default_factory=list)
    counters: PerfCounters | None = None


def generate_detailed(model: CharModel, seed_char: str, n: int,
                      cfg: SamplerConfig | None = None,
                      backend: Backend | str = Backend.FUNCTIONAL,
                      tables: Tables | None = None,
                      engine: LstmEngine | None = None,
                      keep_history: bool = False) -> GenerationResult:
    cfg = cfg or SamplerConfig()
    backend = Backend(backend)
    tables = tables or default_tables()
    if n < 0:
        raise ValueError("length must be non-negative")
    idx = model.vocab.index(seed_char)
    states = [LstmState.zeros(layer.hidden) for layer in model.layers]
    rng = cfg.make_rng()
    if backend is Backend.DATAFLOW and engine is None:
        engine = LstmEngine(model.engine_config(), tables)
    trace: list[GateOutputs] | None = [] if keep_history else None
    result = GenerationResult("", [])
    out = []
    for _ in range(n):
        result.inputs.append(idx)
        x = one_hot(model.vocab, model.vocab.char(idx))
        if backend is Backend.FUNCTIONAL:
            inp = x
            for layer, state in zip(model.layers, states):
                lstm_step(layer, inp, state, tables, trace=trace)
                inp = state.h.copy()
            logits = projection(model.projection, inp)
        else:
            logits = engine.step_model(model.layers, model.projection, x, states)
        if keep_history:
            result.h_history.append([s.h.copy() for s in states])
            result.c_history.append([s.c.copy() for s in states])
        idx = sample_next(logits, cfg, rng)
        out.append(model.vocab.char(idx))
    result.text = "".join(out)
    if trace is not None:
        result.gate_trace = trace
    if engine is not None:
        result.counters = engine.counters
    return result


def generate(model: CharModel, seed_char: str, n: int, cfg: SamplerConfig | None = None,
             backend: Backend | str = Backend.FUNCTIONAL) -> str:
    """Feed ``seed_char`` and generate ``n`` characters, each sampled one fed back as the next input."""
    return generate_detailed(model, seed_char, n, cfg, backend).text


# ---------------------------------------------------------------------------
# Fixed point vs float comparison
# ---------------------------------------------------------------------------

@dataclass
class CompareReport:
    c: ErrorStats
    h: ErrorStats
    steps: int

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "c": {"mean": self.c.mean, "best": self.c.best, "worst": self.c.worst,
                  "per_step": self.c.per_step.tolist()},
            "h": {"mean": self.h.mean, "best": self.h.best, "worst": self.h.worst,
                  "per_step": self.h.per_step.tolist()},
        }


def float_trajectory(fm: FloatModel, inputs: Iterable[int]) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Run the float reference on a character index sequence; returns per-step (c, h), layers concatenated."""
    states = [FloatState.zeros(layer.hidden) for layer in fm.layers]
    cs, hs = [], []
    for idx in inputs:
        inp = one_hot_float(fm.vocab, fm.vocab.char(idx))
        for k, layer in enumerate(fm.layers):
            states[k] = float_oracle_step(layer, inp, states[k])
            inp = states[k].h
        cs.append(np.concatenate([s.c for s in states]))
        hs.append(np.concatenate([s.h for s in states]))
    return cs, hs


def compare_run(model: CharModel, length: int, seed_char: str | None = None,
                cfg: SamplerConfig | None = None) -> CompareReport:
    """Drive both paths with the fixed-point model's own generated input sequence."""
    if length < 1:
        raise ValueError("comparison needs at least one step")
    seed_char = seed_char if seed_char is not None else model.vocab.char(0)
    run = generate_detailed(model, seed_char, length, cfg, keep_history=True)
    fixed_c = [np.concatenate(step) for step in run.c_history]
    fixed_h = [np.concatenate(step) for step in run.h_history]
    float_c, float_h = float_trajectory(model.reference, run.inputs)
    return CompareReport(avg_pct_error(fixed_c, float_c), avg_pct_error(fixed_h, float_h), length)

