import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lstmq88 import fixq
from lstmq88.lstm import FloatLayer
from lstmq88.model_io import (
    MAGIC,
    SHAKESPEARE_CHARS,
    Backend,
    BadMagicError,
    DimMismatchError,
    FloatModel,
    ModelLoadError,
    SampleMode,
    SamplerConfig,
    TruncatedModelError,
    UnknownCharacterError,
    Vocab,
    generate,
    generate_detailed,
    load_model,
    one_hot,
    parse,
    random_float_model,
    sample_next,
    save_model,
    serialize,
)


@pytest.fixture(scope="module")
def small_model():
    return load_model(serialize(random_float_model(seed=3, hidden=8, n_layers=2,
                                                   vocab=Vocab.from_string("abcdé\n"))))


def header(dims, vocab):
    parts = [MAGIC, struct.pack("<II", 1, len(dims))]
    parts += [struct.pack("<II", *d) for d in dims]
    parts += [struct.pack("<I", len(vocab)), vocab.encode()]
    return b"".join(parts)


def weight_floats(dims, vocab_size):
    n = sum(4 * (h * i + h * h + h) for i, h in dims)
    return n + vocab_size * dims[-1][1] + vocab_size


# --- round trip ------------------------------------------------------------

def test_save_load_round_trip_is_exact(small_model):
    again = load_model(save_model(small_model))
    for a, b in zip(small_model.layers, again.layers):
        for g in "ifoc":
            assert np.array_equal(a.gates()[g].w_combined, b.gates()[g].w_combined)
    assert np.array_equal(small_model.projection.w, again.projection.w)
    assert again.vocab == small_model.vocab
    assert save_model(again) == save_model(small_model)


def test_multibyte_vocab_survives(small_model):
    assert "é" in small_model.vocab.chars


def test_quantization_matches_encode():
    fm = random_float_model(seed=5, hidden=4, n_layers=1, vocab=Vocab.from_string("xyz"))
    m = load_model(serialize(fm))
    w32 = fm.layers[0].w_x["i"].astype(np.float32).astype(np.float64)
    expected = [[fixq.encode(v).raw for v in row] for row in w32]
    assert m.layers[0].gate_i.w_x[:, :3].tolist() == expected
    assert np.all(m.layers[0].gate_i.w_x[:, 3:] == 0)


# --- errors ----------------------------------------------------------------

def test_bad_magic(small_model):
    data = bytearray(save_model(small_model))
    data[0] ^= 1
    with pytest.raises(BadMagicError):
        load_model(bytes(data))


@pytest.mark.parametrize("cut", [3, 12, 40, 500])
def test_truncated(small_model, cut):
    data = save_model(small_model)
    with pytest.raises(TruncatedModelError):
        load_model(data[:-cut] if cut < len(data) else data[:cut])


def test_trailing_bytes(small_model):
    with pytest.raises(DimMismatchError):
        load_model(save_model(small_model) + b"\0\0\0\0")


def test_layer_chain_mismatch():
    dims = [(3, 4), (5, 4)]  # second layer expects 5 inputs, first emits 4
    data = header(dims, "abc") + np.zeros(weight_floats(dims, 3), "<f4").tobytes()
    with pytest.raises(DimMismatchError):
        load_model(data)


def test_projection_mismatch_rejected_on_save():
    fm = random_float_model(seed=1, hidden=4, n_layers=1, vocab=Vocab.from_string("ab"))
    fm.proj_w = np.zeros((3, 4))
    with pytest.raises(DimMismatchError):
        serialize(fm)


def test_bad_version(small_model):
    data = bytearray(save_model(small_model))
    data[8] = 2
    with pytest.raises(ModelLoadError):
        load_model(bytes(data))


def test_bad_utf8_vocab():
    dims = [(2, 2)]
    data = header(dims, "ab").replace(b"ab", b"\xff\xfe") + np.zeros(weight_floats(dims, 2), "<f4").tobytes()
    with pytest.raises(ModelLoadError, match="(?i)utf"):
        load_model(data)


def test_duplicate_vocab_is_a_load_error():
    dims = [(2, 2)]
    data = header(dims, "aa") + np.zeros(weight_floats(dims, 2), "<f4").tobytes()
    with pytest.raises(ModelLoadError):
        load_model(data)


# --- reference fixture -------------------------------------------------------

def test_reference_model_dims(reference_model):
    a, b = reference_model.layers
    assert (a.input_size, a.hidden, a.padded_input) == (65, 128, 128)
    assert (b.input_size, b.hidden, b.padded_input) == (128, 128, 128)
    assert reference_model.projection.w.shape == (65, 129)
    assert "".join(reference_model.vocab.chars) == SHAKESPEARE_CHARS


def test_reference_model_keeps_float_weights(reference_model, reference_model_bytes):
    fm = parse(reference_model_bytes)
    w = fm.layers[0].w_x["i"]
    assert np.abs(w).max() <= 0.5
    assert not np.array_equal(w * 256, np.round(w * 256))
    q = reference_model.layers[0].gate_i.w_x[:, :65]
    assert np.all(np.abs(q / 256 - w) <= 0.5 / 256)


# --- vocabulary ------------------------------------------------------------

def test_one_hot():
    v = Vocab.from_string(SHAKESPEARE_CHARS)
    x = one_hot(v, "a")
    assert x.sum() == 256 and x[SHAKESPEARE_CHARS.index("a")] == 256
    with pytest.raises(UnknownCharacterError):
        one_hot(v, "#")


def test_vocab_validation():
    with pytest.raises(ValueError):
        Vocab.from_string("aba")
    assert Vocab.from_string("xyz").char(1) == "y"


# --- sampling --------------------------------------------------------------

def test_argmax():
    cfg = SamplerConfig()
    assert sample_next([1, 3, 2], cfg) == 1
    assert sample_next([5, 5, 1], cfg) == 0
    with pytest.raises(ValueError):
        sample_next([], cfg)


def test_multinomial_deterministic_per_seed():
    logits = np.array([0, 65536, 2 * 65536, 0])
    draw = lambda seed: [sample_next(logits, SamplerConfig(SampleMode.MULTINOMIAL, 1.0, seed),  # noqa: E731
                                     rng=rng) for rng in [np.random.default_rng(seed)] for _ in range(30)]
    assert draw(7) == draw(7)


def test_multinomial_frequencies():
    logits = np.array([0, int(np.log(3) * 65536)])
    cfg = SamplerConfig(SampleMode.MULTINOMIAL)
    rng = np.random.default_rng(0)
    hits = sum(sample_next(logits, cfg, rng) for _ in range(4000))
    assert hits / 4000 == pytest.approx(0.75, abs=0.03)


def test_low_temperature_approaches_argmax():
    cfg = SamplerConfig(SampleMode.MULTINOMIAL, temperature=1e-3)
    rng = np.random.default_rng(0)
    assert all(sample_next([10, 70000, 65536], cfg, rng) == 1 for _ in range(50))


def test_bad_temperature():
    with pytest.raises(ValueError):
        SamplerConfig(temperature=0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(fixq.ACC_MIN, fixq.ACC_MAX), min_size=1, max_size=20), st.integers(0, 1000))
def test_sample_in_range(logits, seed):
    for mode in SampleMode:
        idx = sample_next(logits, SamplerConfig(mode, 1.0, seed))
        assert 0 <= idx < len(logits)


# --- generation ------------------------------------------------------------

def test_generate_zero_length(small_model):
    assert generate(small_model, "a", 0) == ""


def test_generate_unknown_seed(small_model):
    with pytest.raises(UnknownCharacterError):
        generate(small_model, "#", 5)


def test_generate_backends_agree(small_model):
    for cfg in (SamplerConfig(), SamplerConfig(SampleMode.MULTINOMIAL, 0.8, 11)):
        a = generate(small_model, "a", 40, cfg, Backend.FUNCTIONAL)
        b = generate(small_model, "a", 40, cfg, Backend.DATAFLOW)
        assert a == b and len(a) == 40


def test_generate_feeds_back_samples(small_model):
    run = generate_detailed(small_model, "b", 10)
    assert run.inputs[0] == small_model.vocab.index("b")
    assert [small_model.vocab.char(k) for k in run.inputs[1:]] == list(run.text[:-1])


def test_generate_history_and_counters(small_model):
    run = generate_detailed(small_model, "a", 5, backend="dataflow", keep_history=True)
    assert len(run.h_history) == 5 and len(run.h_history[0]) == 2
    assert run.counters.timesteps == 5
    assert generate_detailed(small_model, "a", 5, keep_history=True).gate_trace[0].i.shape == (8,)


def test_float_model_validate_needs_layers():
    with pytest.raises(DimMismatchError):
        FloatModel([], np.zeros((1, 1)), np.zeros(1), Vocab.from_string("a")).validate()


def test_float_layer_round_trip_sizes():
    fm = random_float_model(seed=2, hidden=6, n_layers=3, vocab=Vocab.from_string("pq"))
    assert [(l.input_size, l.hidden) for l in fm.layers] == [(2, 6), (6, 6), (6, 6)]
    assert isinstance(fm.layers[0], FloatLayer)
