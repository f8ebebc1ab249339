import math
import struct
from fractions import Fraction

import pytest
import sfpy
from hypothesis import assume, given
from hypothesis import strategies as st

from fraudproof.dtypes import DType
from fraudproof.numerics import reference, softfloat
from fraudproof.numerics.bops import BopKind, ScalarValue, eval_bop, raw_fn
from fraudproof.numerics.corners import MIN_CASES, export_cases, gen_corner_cases, random_operands, special_pool

F = ScalarValue.from_float
QNAN = 0x7FC00000
bits32 = st.integers(0, 0xFFFFFFFF)
ints32 = st.integers(-(1 << 31), (1 << 31) - 1)


def bits(x: float) -> int:
    return struct.unpack("<I", struct.pack("<f", x))[0]


def both(kind, *operands):
    """Result of the emulated path, after checking the reference path agrees."""
    emu = eval_bop(kind, operands, "emulated")
    ref = eval_bop(kind, operands, "reference")
    assert emu == ref
    return emu


def oracle(fn_name: str, *words: int, rm=None) -> int:
    """Result bits from the independent softfloat binding; NaNs collapse to the canonical NaN."""
    xs = [sfpy.Float32.from_bits(w) for w in words]
    if fn_name == "sqrt":
        r = xs[0].sqrt()
    elif fn_name == "round":
        r = xs[0].round_to(rm, False)
    else:
        r = getattr(xs[0], fn_name)(xs[1])
    out = r.bits
    return QNAN if (out & 0x7F800000) == 0x7F800000 and out & 0x007FFFFF else out


# --- fixed examples ----------------------------------------------------------

def test_add_small_integers():
    assert both(BopKind.F32_ADD, F(1.0), F(2.0)) == F(3.0)


def test_opposite_zeros_sum_to_positive_zero():
    r = both(BopKind.F32_ADD, F(0.0), F(-0.0))
    assert r.payload == 0x00000000


def test_min_orders_negative_zero_first():
    assert both(BopKind.F32_MIN, F(-0.0), F(0.0)).payload == 0x80000000
    assert both(BopKind.F32_MIN, F(0.0), F(-0.0)).payload == 0x80000000
    assert both(BopKind.F32_MAX, F(-0.0), F(0.0)).payload == 0x00000000


def test_min_propagates_canonical_nan():
    assert both(BopKind.F32_MIN, ScalarValue.f32(0xFFC00001), F(1.0)).payload == QNAN
    assert both(BopKind.F32_MAX, F(1.0), ScalarValue.f32(0x7F800001)).payload == QNAN


def test_rounding_at_two_to_the_24():
    assert both(BopKind.F32_ADD, F(16777216.0), F(1.0)) == F(16777216.0)
    assert oracle("add", bits(16777216.0), bits(1.0)) == bits(16777216.0)


def test_i32_mul_wraps():
    assert both(BopKind.I32_MUL, ScalarValue.i32(65536), ScalarValue.i32(65536)).payload == 0
    assert both(BopKind.I32_ADD, ScalarValue.i32(2**31 - 1), ScalarValue.i32(1)).payload == -(2**31)


@pytest.mark.parametrize("x, expected", [
    (1.7, 1), (-1.7, -1), (float("nan"), 0), (3e9, 2**31 - 1), (-3e9, -(2**31)),
    (float("inf"), 2**31 - 1), (float("-inf"), -(2**31)), (-0.0, 0),
])
def test_f32_to_i32_truncates_and_saturates(x, expected):
    assert both(BopKind.F32_TO_I32, F(x)).payload == expected


@pytest.mark.parametrize("x, expected", [(1.7, 1), (255.9, 255), (300.0, 255), (-4.0, 0), (float("nan"), 0)])
def test_f32_to_u8_truncates_and_saturates(x, expected):
    assert both(BopKind.F32_TO_U8, F(x)).payload == expected


@pytest.mark.parametrize("x, rounded, floored", [
    (2.5, 2.0, 2.0), (3.5, 4.0, 3.0), (-2.5, -2.0, -3.0), (-0.4, -0.0, -1.0), (0.5, 0.0, 0.0),
])
def test_round_half_even_and_floor(x, rounded, floored):
    assert both(BopKind.F32_ROUND, F(x)).payload == bits(rounded)
    assert both(BopKind.F32_FLOOR, F(x)).payload == bits(floored)


def test_addition_is_not_associative():
    a, b, c = F(1e30), F(-1e30), F(1.0)
    left = both(BopKind.F32_ADD, both(BopKind.F32_ADD, a, b), c)
    right = both(BopKind.F32_ADD, a, both(BopKind.F32_ADD, b, c))
    assert left == F(1.0)
    assert right == F(0.0)


def test_signature_mismatch_raises():
    with pytest.raises(TypeError):
        eval_bop(BopKind.F32_ADD, [ScalarValue.i32(1), F(1.0)])


def test_scalar_range_checked():
    with pytest.raises(ValueError):
        ScalarValue.u8(256)


def test_codes_round_trip():
    assert len(BopKind) == 18
    for kind in BopKind:
        assert BopKind.from_code(kind.code) is kind
    with pytest.raises(ValueError):
        BopKind.from_code(0)


# --- corner suite ------------------------------------------------------------

def test_special_pool_squares_past_7500():
    pool = special_pool()
    assert len(pool) == 87 == len(set(pool))
    assert len(gen_corner_cases(BopKind.F32_ADD)) == 7569


@pytest.mark.parametrize("kind", [BopKind.F32_SQRT, BopKind.F32_ROUND, BopKind.F32_TO_I32, BopKind.I32_TO_F32])
def test_unary_pools_reach_minimum(kind):
    assert len(gen_corner_cases(kind)) >= MIN_CASES


def test_integer_kinds_have_no_corner_suite():
    assert gen_corner_cases(BopKind.I32_ADD) == []


def test_corner_export_is_deterministic():
    text = export_cases(BopKind.F32_MUL)
    assert text == export_cases(BopKind.F32_MUL)
    assert text.count("\n") == 7569


# --- properties --------------------------------------------------------------

@given(bits32, bits32)
def test_add_and_mul_commute(a, b):
    for kind in (BopKind.F32_ADD, BopKind.F32_MUL, BopKind.F32_MIN, BopKind.F32_MAX):
        fn = raw_fn(kind, DType.F32, "emulated")
        assert fn(a, b) == fn(b, a)


@given(bits32, bits32)
def test_arithmetic_matches_independent_softfloat(a, b):
    assert softfloat.add(a, b) == oracle("add", a, b)
    assert softfloat.sub(a, b) == oracle("sub", a, b)
    assert softfloat.mul(a, b) == oracle("mul", a, b)
    assert softfloat.div(a, b) == oracle("div", a, b)


@given(st.sampled_from(special_pool()), st.sampled_from(special_pool()))
def test_corner_pool_matches_independent_softfloat(a, b):
    assert softfloat.add(a, b) == oracle("add", a, b)
    assert softfloat.div(a, b) == oracle("div", a, b)


@given(bits32)
def test_sqrt_and_rounding_match_independent_softfloat(a):
    assert softfloat.sqrt(a) == oracle("sqrt", a)
    assert softfloat.round_even(a) == oracle("round", a, rm=sfpy.float.ROUND_NEAREST_EVEN)
    assert softfloat.floor(a) == oracle("round", a, rm=sfpy.float.ROUND_DOWN)


@given(st.integers(0, 0x7F7FFFFF))
def test_sqrt_is_correctly_rounded(a):
    r = softfloat.sqrt(a)
    x = reference.to_float(a)
    # exact comparison in rationals: r is the nearest f32 to sqrt(x)
    fx = Fraction(x)
    root = Fraction(reference.to_float(r))
    below = Fraction(reference.to_float(r - 1)) if r > 0 else Fraction(0)
    above = Fraction(reference.to_float(r + 1))
    mid_lo, mid_hi = (below + root) / 2, (root + above) / 2
    assert mid_lo * mid_lo <= fx <= mid_hi * mid_hi


@given(ints32)
def test_int_to_float_matches_independent_softfloat(n):
    assert softfloat.from_int(n) == sfpy.Float32.from_i32(n).bits


@given(st.floats(-2.1e9, 2.1e9, width=32))
def test_truncating_cast_matches_host(x):
    assume(not math.isnan(x))
    assert softfloat.to_i32(bits(x)) == int(x)


@given(bits32, bits32)
def test_min_max_semantics(a, b):
    lo, hi = softfloat.minimum(a, b), softfloat.maximum(a, b)
    x, y = reference.to_float(a), reference.to_float(b)
    if math.isnan(x) or math.isnan(y):
        assert lo == hi == QNAN
    else:
        assert {lo, hi} == {a, b} or a == b
        assert reference.to_float(lo) <= reference.to_float(hi)
        if x == y == 0.0:
            assert lo == (a | b) & 0x80000000 and hi == (a & b) & 0x80000000


@given(bits32)
def test_nan_results_are_canonical(a):
    for kind in (BopKind.F32_SQRT, BopKind.F32_ROUND, BopKind.F32_FLOOR, BopKind.ASSIGN):
        r = raw_fn(kind, DType.F32, "emulated")(a)
        if softfloat.is_nan(r):
            assert r == QNAN


@given(st.sampled_from(list(BopKind)), st.randoms(use_true_random=False))
def test_paths_agree_on_random_operands(kind, rnd):
    ops = random_operands(kind, rnd)
    assert eval_bop(kind, ops, "emulated") == eval_bop(kind, ops, "reference")
