import json

import pytest
from hypothesis import given, settings, strategies as st

from lstmq88 import perf
from lstmq88.dataflow import EngineConfig, PerfCounters


def test_ops_count_examples():
    assert perf.ops_count(128, 128) == 132_096
    assert perf.ops_count(1, 1) == 16
    assert perf.ops_count(2, 3) == 64


def test_ops_count_rejects_narrow_input():
    with pytest.raises(ValueError):
        perf.ops_count(4, 3)
    with pytest.raises(ValueError):
        perf.ops_count(0, 3)


def test_dense_macs():
    assert perf.dense_macs(128, 128) == 4 * 128 * 257


def test_total_ops_examples():
    assert perf.total_ops(128, 128, 2, 1000) == 264_192_000
    assert perf.total_ops(128, 128, 1, 1) == 132_096
    assert perf.total_ops(4, 6, 3, 2) == 2 * (8 * 4 * 7 + 2 * 8 * 4 * 5)


@settings(max_examples=50)
@given(st.integers(1, 64), st.integers(0, 64), st.integers(1, 4), st.integers(1, 50))
def test_total_ops_is_linear_in_steps(h, extra, layers, steps):
    p = h + extra
    assert perf.total_ops(h, p, layers, steps) == steps * perf.total_ops(h, p, layers, 1)


def test_port_ceiling():
    assert perf.port_ceiling_bps(142_000_000) == pytest.approx(2.272e9)


def test_predict_counters_stage_cycles():
    pc = perf.predict_counters(128, 65, 2, 1)
    assert pc.cycles_stage1 == 2 * (128 * 129 + 16)
    assert pc.cycles_stage3 == 2 * (128 + 16)
    assert pc.cycles_projection == 0 and pc.mac_ops == 2 * 132_096


def test_timing_identities():
    r = perf.bench()
    assert r.modeled_time_s == pytest.approx(r.modeled_cycles / r.clock_hz)
    assert r.throughput_ops_s == pytest.approx(r.total_ops / r.modeled_time_s)
    assert r.total_ops == 264_192_000
    assert r.ops_per_layer == 132_096
    assert r.peak_bandwidth_in_Bps <= r.port_ceiling_Bps
    assert r.peak_bandwidth_out_Bps <= r.port_ceiling_Bps
    assert r.modeled_cycles == sum(r.stage_cycles.values())
    assert r.measured_time_s == pytest.approx(r.total_ops / r.measured_throughput_ops_s)


def test_doubling_clock_halves_time():
    a = perf.bench(steps=10)
    b = perf.bench(steps=10, clock_hz=2 * a.clock_hz)
    assert b.modeled_cycles == a.modeled_cycles
    assert b.modeled_time_s == pytest.approx(a.modeled_time_s / 2)
    assert b.throughput_ops_s == pytest.approx(2 * a.throughput_ops_s)


def test_zero_cycles_rejected():
    with pytest.raises(ValueError):
        perf.timing_model(EngineConfig(4, 4), PerfCounters())


def test_bench_rejects_bad_sizes():
    with pytest.raises(ValueError):
        perf.bench(steps=0)


def test_report_serialization():
    r = perf.bench(steps=3)
    d = json.loads(r.dumps())
    assert d["total_ops"] == r.total_ops and "host_overhead_s" in d
    text = r.format_text()
    assert "M-ops/s" in text and "GB/s" in text


def test_projection_toggle():
    with_proj = perf.bench(steps=5)
    without = perf.bench(steps=5, vocab_size=None)
    assert without.projection_macs == 0
    assert with_proj.projection_macs == 5 * 65 * 129
    assert with_proj.total_ops == without.total_ops
