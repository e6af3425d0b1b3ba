"""Transaction-level model of the streaming LSTM accelerator.

Data moves through four 32-bit DMA ports, each beat carrying two 16-bit
lanes. A timestep runs as three strictly sequential stages:

1. gates ``i`` and ``c~`` (two gate units, four MACs) -> stage FIFOs
2. gates ``f`` and ``o`` -> stage FIFOs
3. ewise unit: ``c`` and ``h`` from the FIFOs and ``c_prev``, written back

Port roles::

    port 0  weight stream of the first active gate
    port 1  weight stream of the second active gate
    port 2  vector stream (x and h_prev lanes; c_prev in stage 3)
    port 3  write-back of (c, h)

Gate weight layout (see :func:`pack_gate`): for row ``r`` and column
``k < P + 1`` one beat ``(lane_lo, lane_hi) = ([W_x | b][r, k], W_h[r, k])``,
with ``W_h`` rows zero-extended to ``P + 1``. The matching vector beat is
``([x_pad | 1][k], h_prev[k])``. Lane ``lo`` feeds the x-side MAC and lane
``hi`` the h-side MAC of each gate unit; their sums are added before the
rescale block. One aligned tuple (one beat per input port) is consumed per
cycle once the sync block has started.

Values are computed in bulk with numpy; cycles are accounted per tuple. A
cycle-stepped valid/ready model of the ports and sync block
(``EngineConfig.cycle_accurate``) is kept for small configurations and for
checking the bulk timing.
"""

from __future__ import annotations

import enum
import json
import struct
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import fixq
from .lstm import (
    DimensionError,
    GateParams,
    LayerParams,
    LstmState,
    ProjectionParams,
    ONE,
    pad_input,
)
from .pwl import Tables, default_tables, eval_array

BEAT_BYTES = 4
N_PORTS = 4
WEIGHT_PORTS = (0, 1)
VECTOR_PORT = 2
WRITE_PORT = 3
DEFAULT_CLOCK_HZ = 142_000_000
DEFAULT_LATENCY = 16

STAGE_GATES = {1: ("i", "c"), 2: ("f", "o")}


class SimulationFault(RuntimeError):
    """The schedule or a stream layout is inconsistent (a bug, not bad input)."""


class StreamUnderrun(SimulationFault):
    pass


class FifoUnderrun(SimulationFault):
    pass


class FifoOverflow(SimulationFault):
    pass


# ---------------------------------------------------------------------------
# Beats and packing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Beat32:
    lane_lo: int
    lane_hi: int

    def to_bytes(self) -> bytes:
        return struct.pack("<hh", self.lane_lo, self.lane_hi)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Beat32":
        return cls(*struct.unpack("<hh", data))


def pair_values(values) -> np.ndarray:
    """Pack a flat value sequence two per beat; an odd tail gets a zero ``lane_hi``."""
    values = np.asarray(values, dtype=np.int64).reshape(-1)
    if values.size % 2:
        values = np.append(values, 0)
    return values.reshape(-1, 2)


def unpair_values(beats, count: int) -> np.ndarray:
    flat = np.asarray(beats, dtype=np.int64).reshape(-1)
    if flat.size < count:
        raise StreamUnderrun(f"stream holds {flat.size} values, {count} expected")
    return flat[:count]


def beats_to_bytes(beats) -> bytes:
    """Little-endian 16-bit lanes, ``lane_lo`` first within each 32-bit beat."""
    return np.asarray(beats, dtype=np.int64).astype("<i2").tobytes()


def bytes_to_beats(data: bytes) -> np.ndarray:
    if len(data) % BEAT_BYTES:
        raise ValueError("byte stream is not a whole number of beats")
    return np.frombuffer(data, dtype="<i2").astype(np.int64).reshape(-1, 2)


def lane_width(g: GateParams) -> int:
    return g.padded_input + 1


def pack_gate(g: GateParams) -> np.ndarray:
    """Weight beats of one gate, shape ``(H * (P + 1), 2)``."""
    width = lane_width(g)
    lo = np.hstack([g.w_x, g.bias[:, None]])
    hi = np.zeros((g.hidden, width), dtype=np.int64)
    hi[:, :g.hidden] = g.w_h
    return np.stack([lo, hi], axis=-1).reshape(-1, 2)


def unpack_gate(beats, g_shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`pack_gate` -> (``[W_x | b]`` rows, zero-extended ``W_h`` rows)."""
    hidden, padded = g_shape
    width = padded + 1
    beats = np.asarray(beats, dtype=np.int64)
    if beats.shape != (hidden * width, 2):
        raise StreamUnderrun(f"gate stream has {beats.shape[0]} beats, {hidden * width} expected")
    grid = beats.reshape(hidden, width, 2)
    return grid[..., 0], grid[..., 1]


def pack_vector(x_pad, h_prev, rows: int) -> np.ndarray:
    """Vector beats ``([x_pad | 1][k], h_prev[k])`` repeated once per weight row."""
    x_ext = np.append(np.asarray(x_pad, dtype=np.int64), ONE)
    hi = np.zeros_like(x_ext)
    hi[:len(h_prev)] = h_prev
    one_row = np.stack([x_ext, hi], axis=-1)
    return np.tile(one_row, (rows, 1))


@dataclass(frozen=True)
class LayerImage:
    """Packed weight streams of one layer, keyed by gate name."""

    gates: dict[str, np.ndarray]
    hidden: int
    padded_input: int
    mac_count: int  # MAC issues per timestep, pad slots included

    def stream_bytes(self, gate: str) -> bytes:
        return beats_to_bytes(self.gates[gate])


def pack_weights(layer: LayerParams) -> LayerImage:
    gates = {name: pack_gate(g) for name, g in layer.gates().items()}
    h, p = layer.hidden, layer.padded_input
    return LayerImage(gates, h, p, 8 * h * (p + 1))


def pack_projection(p: ProjectionParams) -> np.ndarray:
    """Row-major ``[W | b]`` paired two values per beat."""
    return pair_values(p.w)


# ---------------------------------------------------------------------------
# Ports, sync block, FIFOs
# ---------------------------------------------------------------------------

class Handshake(enum.Enum):
    IDLE = "idle"
    VALID_NOT_READY = "valid-not-ready"
    TRANSFERRING = "transferring"


class StreamPort:
    """One DMA port: a queue of beats presented from cycle ``start_delay`` onwards."""

    def __init__(self, beats, start_delay: int = 0, name: str = "") -> None:
        self.beats = np.asarray(beats, dtype=np.int64).reshape(-1, 2)
        self.start_delay = int(start_delay)
        self.name = name
        self.pos = 0
        self.state = Handshake.IDLE
        self.stall_cycles = 0

    @property
    def remaining(self) -> int:
        return self.beats.shape[0] - self.pos

    @property
    def transferred(self) -> int:
        return self.pos

    def valid(self, cycle: int) -> bool:
        return cycle >= self.start_delay and self.remaining > 0

    def clock(self, cycle: int, ready: bool) -> np.ndarray | None:
        """Advance one cycle; returns the beat if valid and ready coincide."""
        if not self.valid(cycle):
            self.state = Handshake.IDLE
            return None
        if not ready:
            self.state = Handshake.VALID_NOT_READY
            self.stall_cycles += 1
            return None
        self.state = Handshake.TRANSFERRING
        beat = self.beats[self.pos]
        self.pos += 1
        return beat

    def take(self, n: int) -> np.ndarray:
        """Bulk transfer of ``n`` beats."""
        if n > self.remaining:
            raise StreamUnderrun(f"port {self.name or '?'} exhausted: {n} beats wanted, {self.remaining} left")
        out = self.beats[self.pos:self.pos + n]
        self.pos += n
        self.state = Handshake.TRANSFERRING if n else self.state
        return out


class SyncBlock:
    """Elastic buffers that hold early streams until the last port starts."""

    def __init__(self, ports: Sequence[StreamPort], depth: int = 2) -> None:
        if depth < 2:
            raise ValueError("sync buffers need depth >= 2 to sustain one tuple per cycle")
        self.ports = list(ports)
        self.depth = depth
        self.buffers: list[deque] = [deque() for _ in self.ports]
        self.started = False
        self.first_emit: int | None = None

    def run_cycles(self, n_tuples: int, max_cycles: int = 10_000_000) -> tuple[np.ndarray, int]:
        """Cycle-stepped valid/ready model.

        Returns the aligned tuples, shape ``(n_tuples, n_ports, 2)``, and the
        number of cycles elapsed until the last one was emitted.
        """
        out = np.zeros((n_tuples, len(self.ports), 2), dtype=np.int64)
        got = 0
        seen = [False] * len(self.ports)
        cycle = 0
        while got < n_tuples:
            if cycle >= max_cycles:
                raise StreamUnderrun("sync block starved: a port never delivered enough beats")
            for k, (port, buf) in enumerate(zip(self.ports, self.buffers)):
                beat = port.clock(cycle, ready=len(buf) < self.depth)
                if beat is not None:
                    buf.append(beat)
                    seen[k] = True
            if not self.started and all(seen):
                self.started = True
            if self.started and all(self.buffers):
                if self.first_emit is None:
                    self.first_emit = cycle
                out[got] = [buf.popleft() for buf in self.buffers]
                got += 1
            elif any(not buf and not port.remaining for port, buf in zip(self.ports, self.buffers)):
                raise StreamUnderrun("port exhausted before the stage finished")
            cycle += 1
        return out, cycle

    def run_bulk(self, n_tuples: int) -> tuple[np.ndarray, int]:
        """Same result as :meth:`run_cycles` without stepping.

        After the last port starts, every buffer receives and releases one beat
        per cycle, so the stage emits one tuple per cycle from that point.
        """
        start = max(p.start_delay for p in self.ports)
        cols = [p.take(n_tuples) for p in self.ports]
        self.started = True
        self.first_emit = start
        return np.stack(cols, axis=1), start + n_tuples


class StageFifo:
    def __init__(self, capacity: int, name: str = "") -> None:
        self.capacity = capacity
        self.name = name
        self._q: deque[int] = deque()

    def __len__(self) -> int:
        return len(self._q)

    def push_all(self, values) -> None:
        values = np.asarray(values, dtype=np.int64).tolist()
        if len(self._q) + len(values) > self.capacity:
            raise FifoOverflow(f"FIFO {self.name} overflow")
        self._q.extend(values)

    def pop_all(self, n: int) -> np.ndarray:
        if len(self._q) < n:
            raise FifoUnderrun(f"FIFO {self.name} holds {len(self._q)} values, {n} needed")
        return np.array([self._q.popleft() for _ in range(n)], dtype=np.int64)


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EngineConfig:
    hidden: int
    padded_input: int
    clock_hz: int = DEFAULT_CLOCK_HZ
    port_count: int = N_PORTS
    latency: int = DEFAULT_LATENCY
    port_delays: tuple[int, ...] = (0, 0, 0, 0)
    cycle_accurate: bool = False
    sync_depth: int = 4

    def __post_init__(self) -> None:
        if self.hidden < 1 or self.padded_input < 1 or self.clock_hz < 1:
            raise ValueError("hidden, padded_input and clock_hz must be positive")
        if self.port_count != N_PORTS:
            raise ValueError("the engine is wired for exactly 4 DMA ports")
        if len(self.port_delays) != N_PORTS or min(self.port_delays) < 0:
            raise ValueError("port_delays needs 4 non-negative entries")
        if self.latency < 0:
            raise ValueError("latency must be non-negative")


@dataclass
class PerfCounters:
    cycles_stage1: int = 0
    cycles_stage2: int = 0
    cycles_stage3: int = 0
    cycles_projection: int = 0
    mac_ops: int = 0
    projection_macs: int = 0
    ewise_ops: int = 0
    layer_steps: int = 0
    timesteps: int = 0
    bytes_in: list[int] = field(default_factory=lambda: [0] * N_PORTS)
    bytes_out: list[int] = field(default_factory=lambda: [0] * N_PORTS)
    # densest single stage seen so far, as (bytes, cycles)
    peak_in: tuple[int, int] = (0, 1)
    peak_out: tuple[int, int] = (0, 1)

    @property
    def total_cycles(self) -> int:
        return self.cycles_stage1 + self.cycles_stage2 + self.cycles_stage3 + self.cycles_projection

    def record_stage(self, bytes_in: int, bytes_out: int, cycles: int) -> None:
        if bytes_in * self.peak_in[1] > self.peak_in[0] * cycles:
            self.peak_in = (bytes_in, cycles)
        if bytes_out * self.peak_out[1] > self.peak_out[0] * cycles:
            self.peak_out = (bytes_out, cycles)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["peak_in"] = list(self.peak_in)
        d["peak_out"] = list(self.peak_out)
        d["total_cycles"] = self.total_cycles
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "PerfCounters":
        data = {k: v for k, v in data.items() if k != "total_cycles"}
        data["peak_in"] = tuple(data["peak_in"])
        data["peak_out"] = tuple(data["peak_out"])
        return cls(**data)

    def format_text(self) -> str:
        rows = [
            ("cycles_stage1", self.cycles_stage1),
            ("cycles_stage2", self.cycles_stage2),
            ("cycles_stage3", self.cycles_stage3),
            ("cycles_projection", self.cycles_projection),
            ("total_cycles", self.total_cycles),
            ("mac_ops", self.mac_ops),
            ("projection_macs", self.projection_macs),
            ("ewise_ops", self.ewise_ops),
            ("layer_steps", self.layer_steps),
            ("timesteps", self.timesteps),
        ]
        rows += [(f"bytes_in[{k}]", v) for k, v in enumerate(self.bytes_in)]
        rows += [(f"bytes_out[{k}]", v) for k, v in enumerate(self.bytes_out)]
        return "\n".join(f"{name:<20} {value}" for name, value in rows)


WeightHook = Callable[[str, np.ndarray], np.ndarray]


class LstmEngine:
    """Sequential three-stage state machine over packed weight images.

    ``weight_hook(gate_name, beats)`` may rewrite a packed stream before it is
    placed on a port; it exists to inject faults in tests.
    """

    def __init__(self, config: EngineConfig, tables: Tables | None = None,
                 weight_hook: WeightHook | None = None,
                 delay_source: Callable[[], Sequence[int]] | None = None) -> None:
        self.config = config
        self.tables = tables or default_tables()
        self.weight_hook = weight_hook
        self.delay_source = delay_source
        self.counters = PerfCounters()
        self.fifos = {name: StageFifo(config.hidden, name) for name in ("i", "c", "f", "o")}
        self._images: dict[int, tuple[LayerParams, LayerImage]] = {}
        self._proj_images: dict[int, tuple[ProjectionParams, np.ndarray]] = {}

    # -- configuration -----------------------------------------------------

    def image_for(self, layer: LayerParams) -> LayerImage:
        cached = self._images.get(id(layer))
        if cached is not None and cached[0] is layer:
            return cached[1]
        image = pack_weights(layer)
        if self.weight_hook is not None:
            image = LayerImage({k: self.weight_hook(k, v.copy()) for k, v in image.gates.items()},
                               image.hidden, image.padded_input, image.mac_count)
        self._images[id(layer)] = (layer, image)
        return image

    def _delays(self) -> Sequence[int]:
        return self.delay_source() if self.delay_source is not None else self.config.port_delays

    def _sync(self, streams: Sequence[np.ndarray], n_tuples: int, port_ids: Sequence[int]):
        delays = self._delays()
        ports = [StreamPort(s, delays[k], name=str(k)) for s, k in zip(streams, port_ids)]
        sync = SyncBlock(ports, depth=self.config.sync_depth)
        if self.config.cycle_accurate:
            tuples, cycles = sync.run_cycles(n_tuples)
        else:
            tuples, cycles = sync.run_bulk(n_tuples)
        for port, k in zip(ports, port_ids):
            self.counters.bytes_in[k] += port.transferred * BEAT_BYTES
        return tuples, cycles, sum(p.transferred for p in ports) * BEAT_BYTES

    def _check_layer(self, layer: LayerParams) -> None:
        if layer.hidden != self.config.hidden:
            raise DimensionError(f"engine built for H={self.config.hidden}, layer has H={layer.hidden}")
        if layer.padded_input > self.config.padded_input:
            raise DimensionError("layer input exceeds the engine's padded input size")

    # -- stages ------------------------------------------------------------

    def run_stage(self, layer: LayerParams, stage_id: int, x_pad, h_prev) -> tuple[np.ndarray, np.ndarray]:
        """Stream two gates through their MAC pairs into the stage FIFOs."""
        if stage_id not in STAGE_GATES:
            raise ValueError("gate stages are 1 and 2")
        self._check_layer(layer)
        image = self.image_for(layer)
        h, p = image.hidden, image.padded_input
        x_pad = np.asarray(x_pad, dtype=np.int64)
        h_prev = np.asarray(h_prev, dtype=np.int64)
        if x_pad.shape != (p,) or h_prev.shape != (h,):
            raise DimensionError("stage inputs do not match the layer dimensions")

        names = STAGE_GATES[stage_id]
        width = p + 1
        n = h * width
        streams = [image.gates[names[0]], image.gates[names[1]], pack_vector(x_pad, h_prev, h)]
        tuples, cycles, moved = self._sync(streams, n, (WEIGHT_PORTS[0], WEIGHT_PORTS[1], VECTOR_PORT))
        vec = tuples[:, 2, :].reshape(h, width, 2)
        outputs = []
        for slot, name in enumerate(names):
            w = tuples[:, slot, :].reshape(h, width, 2)
            # two MACs per gate unit, reset at each row
            acc_x = fixq.mac_rows(w[..., 0], vec[..., 0])
            acc_h = fixq.mac_rows(w[..., 1], vec[..., 1])
            act = layer.gates()[name].activation
            y = eval_array(self.tables.for_kind(act), fixq.rescale_array(fixq.acc_add_array(acc_x, acc_h)))
            self.fifos[name].push_all(y)
            outputs.append(y)

        cycles += self.config.latency
        if stage_id == 1:
            self.counters.cycles_stage1 += cycles
        else:
            self.counters.cycles_stage2 += cycles
        self.counters.mac_ops += 4 * n  # four MACs busy on every tuple
        self.counters.record_stage(moved, 0, cycles)
        return outputs[0], outputs[1]

    def run_stage3(self, c_prev) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Drain the FIFOs through the ewise unit; returns ``(c, h, write-back beats)``."""
        h_size = self.config.hidden
        c_prev = np.asarray(c_prev, dtype=np.int64)
        if c_prev.shape != (h_size,):
            raise DimensionError("c_prev does not match the hidden size")
        i = self.fifos["i"].pop_all(h_size)
        ctilde = self.fifos["c"].pop_all(h_size)
        f = self.fifos["f"].pop_all(h_size)
        o = self.fifos["o"].pop_all(h_size)

        port = StreamPort(pair_values(c_prev), self._delays()[VECTOR_PORT], name=str(VECTOR_PORT))
        c_in = unpair_values(port.take(port.remaining), h_size)
        self.counters.bytes_in[VECTOR_PORT] += port.transferred * BEAT_BYTES

        c = fixq.rescale_array(fixq.acc_add_array(fixq.mul_array(f, c_in), fixq.mul_array(i, ctilde)))
        h = fixq.rescale_array(fixq.mul_array(o, eval_array(self.tables.tanh, c)))
        out_beats = np.stack([c, h], axis=-1)
        self.counters.bytes_out[WRITE_PORT] += out_beats.shape[0] * BEAT_BYTES

        # one element per cycle through the ewise pipeline
        cycles = port.start_delay + h_size + self.config.latency
        self.counters.cycles_stage3 += cycles
        self.counters.ewise_ops += 3 * h_size  # two multiplies + one add for c, one multiply for h
        self.counters.record_stage(port.transferred * BEAT_BYTES, out_beats.shape[0] * BEAT_BYTES, cycles)
        return c, h, out_beats

    def run_timestep(self, layer: LayerParams, x, state: LstmState) -> LstmState:
        """Three sequential stages; ``state`` is overwritten in place."""
        self._check_layer(layer)
        if state.c.shape != (layer.hidden,) or state.h.shape != (layer.hidden,):
            raise DimensionError("state does not match the layer's hidden size")
        x_pad = pad_input(x, layer.padded_input)
        self.run_stage(layer, 1, x_pad, state.h)
        self.run_stage(layer, 2, x_pad, state.h)
        _, _, beats = self.run_stage3(state.c)
        # write-back lands on the c_prev / h_prev buffers
        state.c[:] = beats[:, 0]
        state.h[:] = beats[:, 1]
        self.counters.layer_steps += 1
        return state

    def projection_image(self, proj: ProjectionParams) -> np.ndarray:
        cached = self._proj_images.get(id(proj))
        if cached is not None and cached[0] is proj:
            return cached[1]
        beats = pack_projection(proj)
        self._proj_images[id(proj)] = (proj, beats)
        return beats

    def run_projection(self, proj: ProjectionParams, h) -> np.ndarray:
        """Final matrix-vector product on one MAC, one value per cycle."""
        h = np.asarray(h, dtype=np.int64)
        if h.shape != (proj.hidden,):
            raise DimensionError("projection input does not match its width")
        rows, width = proj.w.shape
        n_values = rows * width
        w_beats = self.projection_image(proj)
        v_beats = pair_values(np.tile(np.append(h, ONE), rows))
        delays = self._delays()
        w_port = StreamPort(w_beats, delays[WEIGHT_PORTS[0]], "0")
        v_port = StreamPort(v_beats, delays[VECTOR_PORT], str(VECTOR_PORT))
        w = unpair_values(w_port.take(w_beats.shape[0]), n_values).reshape(rows, width)
        v = unpair_values(v_port.take(v_beats.shape[0]), n_values).reshape(rows, width)
        logits = fixq.mac_rows(w, v)

        moved = (w_port.transferred + v_port.transferred) * BEAT_BYTES
        self.counters.bytes_in[WEIGHT_PORTS[0]] += w_port.transferred * BEAT_BYTES
        self.counters.bytes_in[VECTOR_PORT] += v_port.transferred * BEAT_BYTES
        # one 32-bit logit per beat
        self.counters.bytes_out[WRITE_PORT] += rows * BEAT_BYTES
        cycles = max(w_port.start_delay, v_port.start_delay) + n_values + self.config.latency
        self.counters.cycles_projection += cycles
        self.counters.projection_macs += n_values
        self.counters.record_stage(moved, rows * BEAT_BYTES, cycles)
        return logits

    def step_model(self, layers: Sequence[LayerParams], proj: ProjectionParams | None, x,
                   states: Sequence[LstmState]) -> np.ndarray | None:
        """One timestep through every layer; the last h feeds the projection."""
        if len(layers) != len(states):
            raise DimensionError("one state per layer is required")
        inp = np.asarray(x, dtype=np.int64)
        for layer, state in zip(layers, states):
            self.run_timestep(layer, inp, state)
            inp = state.h.copy()  # copied to the next layer's x location
        self.counters.timesteps += 1
        return self.run_projection(proj, inp) if proj is not None else None

    def run_sequence(self, layers: Sequence[LayerParams], proj: ProjectionParams | None, x_seq,
                     states: Sequence[LstmState] | None = None):
        """Run every input of ``x_seq``; returns ``(h history, logits history, counters)``.

        The h history holds the last layer's h after each timestep.
        """
        if not layers:
            raise DimensionError("at least one layer is required")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.input_size != prev.hidden:
                raise DimensionError("layer input size must equal the previous hidden size")
        if proj is not None and proj.hidden != layers[-1].hidden:
            raise DimensionError("projection width does not match the last hidden size")
        if states is None:
            states = [LstmState.zeros(layer.hidden) for layer in layers]
        h_hist, logit_hist = [], []
        for x in x_seq:
            logits = self.step_model(layers, proj, x, states)
            h_hist.append(states[-1].h.copy())
            if logits is not None:
                logit_hist.append(logits)
        return h_hist, logit_hist, self.counters
