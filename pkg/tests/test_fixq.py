import numpy as np
import pytest
from hypothesis import given, strategies as st

from lstmq88 import fixq
from lstmq88.fixq import Acc32, Q88, acc_add, decode, encode, mul, rescale

q88_raw = st.integers(fixq.Q88_MIN, fixq.Q88_MAX)
acc_raw = st.integers(fixq.ACC_MIN, fixq.ACC_MAX)


def test_encode_examples():
    assert encode(1.0).raw == 256
    assert encode(0.0).raw == 0
    assert encode(200.0).raw == 32767
    assert encode(-200.0).raw == -32768


def test_encode_rounds_half_to_even():
    # 0.5 LSB and 1.5 LSB
    assert encode(0.5 / 256).raw == 0
    assert encode(1.5 / 256).raw == 2
    assert encode(-0.5 / 256).raw == 0


def test_encode_rejects_non_finite():
    with pytest.raises(ValueError):
        encode(float("nan"))


def test_decode_examples():
    assert decode(Q88(256)) == 1.0
    assert decode(Q88(-128)) == -0.5
    assert decode(Q88(1)) == 0.00390625


def test_mul_examples():
    assert mul(encode(0.5), encode(0.5)) == Acc32(16384)
    assert mul(encode(1.0), encode(-1.0)) == Acc32(-65536)
    assert mul(encode(127.99609375), encode(127.99609375)).raw == 32767 * 32767 == 1073676289


def test_acc_add_examples():
    assert acc_add(Acc32(65536), Acc32(65536)).raw == 131072
    assert acc_add(Acc32(2**31 - 1), Acc32(1)).raw == 2**31 - 1
    assert acc_add(Acc32(-5), Acc32(5)).raw == 0
    assert acc_add(Acc32(-2**31), Acc32(-1)).raw == -2**31


def test_rescale_examples():
    assert rescale(Acc32(65536)).raw == 256
    assert rescale(Acc32(2**30)).raw == 32767
    assert rescale(Acc32(-1)).raw == -1
    assert rescale(Acc32(-2**31)).raw == -32768


def test_rescale_nearest_mode():
    with fixq.rescale_mode(fixq.NEAREST):
        assert rescale(Acc32(-1)).raw == 0
        assert rescale(Acc32(128)).raw == 1
        assert rescale(Acc32(127)).raw == 0
    assert fixq.get_rescale_mode() == fixq.TRUNCATE


def test_raw_range_enforced():
    with pytest.raises(ValueError):
        Q88(40000)
    with pytest.raises(ValueError):
        Acc32(2**31)


@given(q88_raw)
def test_round_trip_exact(raw):
    assert encode(decode(Q88(raw))).raw == raw


@given(q88_raw, q88_raw)
def test_mul_is_exact_integer_product(a, b):
    assert mul(Q88(a), Q88(b)).raw == a * b
    # decode-level error is zero
    assert float(mul(Q88(a), Q88(b))) == decode(Q88(a)) * decode(Q88(b))


@given(st.floats(-128, 127.99609375))
def test_rescale_of_unit_product_within_one_lsb(x):
    q = encode(x)
    assert abs(rescale(mul(q, encode(1.0))).raw - q.raw) <= 1


@given(acc_raw, acc_raw)
def test_acc_add_commutes(a, b):
    assert acc_add(Acc32(a), Acc32(b)) == acc_add(Acc32(b), Acc32(a))


@given(st.integers(-2**29, 2**29), st.integers(-2**29, 2**29), st.integers(-2**29, 2**29))
def test_acc_add_associative_without_saturation(a, b, c):
    A, B, C = Acc32(a), Acc32(b), Acc32(c)
    assert acc_add(acc_add(A, B), C) == acc_add(A, acc_add(B, C))


@given(acc_raw, acc_raw, acc_raw)
def test_acc_add_saturation_is_monotone(a, b, c):
    lo, hi = sorted((b, c))
    assert acc_add(Acc32(a), Acc32(lo)).raw <= acc_add(Acc32(a), Acc32(hi)).raw
    exact = a + b
    got = acc_add(Acc32(a), Acc32(b)).raw
    assert got == min(max(exact, fixq.ACC_MIN), fixq.ACC_MAX)


@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
def test_encode_monotone(x, y):
    lo, hi = sorted((x, y))
    assert encode(lo).raw <= encode(hi).raw


@given(acc_raw)
def test_rescale_matches_floor_division(a):
    expected = min(max(a // 256, fixq.Q88_MIN), fixq.Q88_MAX)
    assert rescale(Acc32(a)).raw == expected


@given(st.lists(st.floats(-300, 300), min_size=1, max_size=20))
def test_encode_array_matches_scalar(xs):
    assert fixq.encode_array(xs).tolist() == [encode(x).raw for x in xs]


def _sat_dot(ws, vs):
    acc = 0
    for w, v in zip(ws, vs):
        acc = min(max(acc + w * v, fixq.ACC_MIN), fixq.ACC_MAX)
    return acc


@given(st.lists(st.tuples(q88_raw, q88_raw), min_size=1, max_size=40))
def test_mac_rows_matches_sequential_saturating_loop(pairs):
    w = np.array([[p[0] for p in pairs]])
    v = np.array([p[1] for p in pairs])
    assert fixq.mac_rows(w, v).tolist() == [_sat_dot(w[0].tolist(), v.tolist())]


def test_mac_rows_saturation_then_recovery():
    # saturates high on the third product, then a large negative pulls it back
    big = 32767 * 32767
    w = np.array([[32767, 32767, 32767, -32768]])
    v = np.array([32767, 32767, 32767, 32767])
    expected = (2**31 - 1) - 32768 * 32767
    assert big * 3 > 2**31
    assert fixq.mac_rows(w, v)[0] == expected
