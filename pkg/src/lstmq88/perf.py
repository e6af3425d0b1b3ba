"""Operation counts, modeled timing and DMA bandwidth for the accelerator.

Op convention: one op per MAC issue in the gate units. Each of the four gates
runs two MACs (x-side and h-side lanes) over ``P + 1`` beats per row, so a
layer timestep costs ``8 * H * (P + 1)``; the h lane's zero pad slot counts
because the MAC spends the cycle on it. Element-wise and projection work is
tallied separately and left out of the headline count.

:func:`predict_counters` reproduces, in closed form, the counters the
simulator accumulates, so a 1000-step benchmark needs no simulation.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

from .dataflow import (
    BEAT_BYTES,
    DEFAULT_CLOCK_HZ,
    DEFAULT_LATENCY,
    N_PORTS,
    VECTOR_PORT,
    WEIGHT_PORTS,
    WRITE_PORT,
    EngineConfig,
    PerfCounters,
)

# published hardware measurements, shown next to the model for comparison only
PUBLISHED_OPS_PER_LAYER = 132.1e3
PUBLISHED_TOTAL_OPS = 264.4e6
PUBLISHED_THROUGHPUT_OPS_S = 388.8e6
PUBLISHED_PEAK_BANDWIDTH_BPS = 1.236e9


def ops_count(hidden: int, padded_input: int) -> int:
    if hidden < 1 or padded_input < 1:
        raise ValueError("hidden and padded_input must be >= 1")
    if padded_input < hidden:
        raise ValueError("padded_input must be at least hidden")
    return 8 * hidden * (padded_input + 1)


def dense_macs(hidden: int, padded_input: int) -> int:
    """Multiplies against real matrix entries only: ``4 * H * (P + H + 1)``."""
    return 4 * hidden * (padded_input + hidden + 1)


def total_ops(hidden: int, padded_input: int, layers: int, timesteps: int) -> int:
    """Headline op count; the first layer uses ``padded_input``, later layers ``P = H``."""
    if min(hidden, padded_input, layers, timesteps) < 1:
        raise ValueError("all arguments must be >= 1")
    per_step = ops_count(hidden, padded_input) + (layers - 1) * ops_count(hidden, hidden)
    return per_step * timesteps


def port_ceiling_bps(clock_hz: int, ports: int = N_PORTS) -> float:
    """Aggregate per-direction DMA bandwidth: every port moving one beat per cycle."""
    return ports * BEAT_BYTES * clock_hz


def predict_counters(hidden: int, input_size: int, layers: int, timesteps: int,
                     vocab_size: int | None = None, latency: int = DEFAULT_LATENCY) -> PerfCounters:
    """Counters the engine reports for a run with zero port start delays.

    ``vocab_size`` enables the output projection after the last layer.
    """
    pc = PerfCounters()
    beats = lambda values: math.ceil(values / 2)  # noqa: E731
    for _ in range(timesteps):
        for k in range(layers):
            p = max(input_size, hidden) if k == 0 else hidden
            tuples = hidden * (p + 1)
            stage = tuples + latency
            pc.cycles_stage1 += stage
            pc.cycles_stage2 += stage
            for port in (*WEIGHT_PORTS, VECTOR_PORT):
                pc.bytes_in[port] += 2 * tuples * BEAT_BYTES
            pc.record_stage(3 * tuples * BEAT_BYTES, 0, stage)

            c_beats = beats(hidden)
            stage3 = hidden + latency
            pc.cycles_stage3 += stage3
            pc.bytes_in[VECTOR_PORT] += c_beats * BEAT_BYTES
            pc.bytes_out[WRITE_PORT] += hidden * BEAT_BYTES
            pc.record_stage(c_beats * BEAT_BYTES, hidden * BEAT_BYTES, stage3)

            pc.mac_ops += ops_count(hidden, p)
            pc.ewise_ops += 3 * hidden
            pc.layer_steps += 1
        pc.timesteps += 1
        if vocab_size:
            n = vocab_size * (hidden + 1)
            cycles = n + latency
            pc.cycles_projection += cycles
            pc.projection_macs += n
            pc.bytes_in[WEIGHT_PORTS[0]] += beats(n) * BEAT_BYTES
            pc.bytes_in[VECTOR_PORT] += beats(n) * BEAT_BYTES
            pc.bytes_out[WRITE_PORT] += vocab_size * BEAT_BYTES
            pc.record_stage(2 * beats(n) * BEAT_BYTES, vocab_size * BEAT_BYTES, cycles)
    return pc


@dataclass
class PerfReport:
    ops_per_layer: int
    total_ops: int
    ewise_ops: int
    projection_macs: int
    modeled_cycles: int
    clock_hz: int
    modeled_time_s: float
    throughput_ops_s: float
    peak_bandwidth_in_Bps: float
    peak_bandwidth_out_Bps: float
    port_ceiling_Bps: float
    bytes_in: list[int]
    bytes_out: list[int]
    stage_cycles: dict[str, int]
    measured_throughput_ops_s: float = PUBLISHED_THROUGHPUT_OPS_S
    measured_peak_bandwidth_Bps: float = PUBLISHED_PEAK_BANDWIDTH_BPS

    @property
    def measured_time_s(self) -> float:
        """Run time implied by the measured throughput for the same op count."""
        return self.total_ops / self.measured_throughput_ops_s

    @property
    def host_overhead_s(self) -> float:
        return self.measured_time_s - self.modeled_time_s

    def to_dict(self) -> dict:
        d = asdict(self)
        d["measured_time_s"] = self.measured_time_s
        d["host_overhead_s"] = self.host_overhead_s
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def format_text(self) -> str:
        lines = [
            f"ops per layer          {self.ops_per_layer:,}  (published: {PUBLISHED_OPS_PER_LAYER / 1e3:.1f} K-ops)",
            f"total ops              {self.total_ops:,}  (published: {PUBLISHED_TOTAL_OPS / 1e6:.1f} M-ops)",
            f"ewise ops (excluded)   {self.ewise_ops:,}",
            f"projection MACs (excl) {self.projection_macs:,}",
            f"modeled cycles         {self.modeled_cycles:,} @ {self.clock_hz / 1e6:g} MHz",
            f"modeled time           {self.modeled_time_s:.6f} s",
            f"modeled throughput     {self.throughput_ops_s / 1e6:.1f} M-ops/s",
            f"measured throughput    {self.measured_throughput_ops_s / 1e6:.1f} M-ops/s (includes host overhead)",
            f"host overhead          {self.host_overhead_s:.6f} s "
            f"({self.measured_time_s:.6f} s measured-equivalent vs {self.modeled_time_s:.6f} s modeled)",
            f"peak bandwidth in      {self.peak_bandwidth_in_Bps / 1e9:.3f} GB/s",
            f"peak bandwidth out     {self.peak_bandwidth_out_Bps / 1e9:.3f} GB/s",
            f"port ceiling           {self.port_ceiling_Bps / 1e9:.3f} GB/s per direction",
            f"measured peak bw       {self.measured_peak_bandwidth_Bps / 1e9:.3f} GB/s",
        ]
        lines += [f"cycles {name:<16}{value:,}" for name, value in self.stage_cycles.items()]
        return "\n".join(lines)


def timing_model(cfg: EngineConfig, counters: PerfCounters) -> PerfReport:
    cycles = counters.total_cycles
    if cycles <= 0:
        raise ValueError("counters hold no cycles; run something first")
    if counters.layer_steps == 0:
        raise ValueError("counters hold no layer timesteps")
    clock = cfg.clock_hz
    time_s = cycles / clock
    peak_in = counters.peak_in[0] / counters.peak_in[1] * clock
    peak_out = counters.peak_out[0] / counters.peak_out[1] * clock
    return PerfReport(
        ops_per_layer=ops_count(cfg.hidden, cfg.padded_input),
        total_ops=counters.mac_ops,
        ewise_ops=counters.ewise_ops,
        projection_macs=counters.projection_macs,
        modeled_cycles=cycles,
        clock_hz=clock,
        modeled_time_s=time_s,
        throughput_ops_s=counters.mac_ops / time_s,
        peak_bandwidth_in_Bps=peak_in,
        peak_bandwidth_out_Bps=peak_out,
        port_ceiling_Bps=port_ceiling_bps(clock, cfg.port_count),
        bytes_in=list(counters.bytes_in),
        bytes_out=list(counters.bytes_out),
        stage_cycles={
            "stage1": counters.cycles_stage1,
            "stage2": counters.cycles_stage2,
            "stage3": counters.cycles_stage3,
            "projection": counters.cycles_projection,
        },
    )


def bench(hidden: int = 128, layers: int = 2, steps: int = 1000, input_size: int = 65,
          vocab_size: int | None = 65, clock_hz: int = DEFAULT_CLOCK_HZ,
          latency: int = DEFAULT_LATENCY) -> PerfReport:
    """Analytic benchmark of a ``layers x hidden`` character model."""
    if min(hidden, layers, steps, input_size, clock_hz) < 1:
        raise ValueError("all sizes must be positive")
    cfg = EngineConfig(hidden=hidden, padded_input=max(input_size, hidden),
                       clock_hz=clock_hz, latency=latency)
    counters = predict_counters(hidden, input_size, layers, steps, vocab_size, latency)
    return timing_model(cfg, counters)
