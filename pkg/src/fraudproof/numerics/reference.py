"""Host-float reference semantics for the basic operations.

f32 arithmetic is computed in binary64 and rounded once to binary32; for
+, -, *, / and sqrt of binary32 operands that double rounding is innocuous
(53 >= 2*24 + 2), so the result is the correctly rounded binary32 value.
"""

from __future__ import annotations

import ctypes
import math
import struct

from ..dtypes import I32_MAX, I32_MIN

_F32 = struct.Struct("<f")
_U32 = struct.Struct("<I")

QNAN = 0x7FC00000
_POS_INF = 0x7F800000
_NEG_INF = 0xFF800000


def to_float(bits: int) -> float:
    return _F32.unpack(_U32.pack(bits))[0]


def from_float(x: float) -> int:
    if x != x:
        return QNAN
    try:
        return _U32.unpack(_F32.pack(x))[0]
    except OverflowError:
        return _NEG_INF if x < 0 else _POS_INF


def add(a: int, b: int) -> int:
    return from_float(to_float(a) + to_float(b))


def sub(a: int, b: int) -> int:
    return from_float(to_float(a) - to_float(b))


def mul(a: int, b: int) -> int:
    return from_float(to_float(a) * to_float(b))


def div(a: int, b: int) -> int:
    x, y = to_float(a), to_float(b)
    if y == 0.0:
        if x == 0.0 or x != x:
            return QNAN
        neg = (math.copysign(1.0, x) < 0) != (math.copysign(1.0, y) < 0)
        return _NEG_INF if neg else _POS_INF
    return from_float(x / y)


def sqrt(a: int) -> int:
    x = to_float(a)
    if x != x or x < 0:
        return QNAN
    return from_float(math.sqrt(x))


def _pick_equal(x: float, y: float, prefer_negative: bool) -> float:
    neg_x = math.copysign(1.0, x) < 0
    neg_y = math.copysign(1.0, y) < 0
    if neg_x == neg_y:
        return x
    if prefer_negative:
        return x if neg_x else y
    return y if neg_x else x


def minimum(a: int, b: int) -> int:
    x, y = to_float(a), to_float(b)
    if x != x or y != y:
        return QNAN
    if x < y:
        return a
    if y < x:
        return b
    return from_float(_pick_equal(x, y, prefer_negative=True))


def maximum(a: int, b: int) -> int:
    x, y = to_float(a), to_float(b)
    if x != x or y != y:
        return QNAN
    if x > y:
        return a
    if y > x:
        return b
    return from_float(_pick_equal(x, y, prefer_negative=False))


def round_even(a: int) -> int:
    x = to_float(a)
    if x != x:
        return QNAN
    if math.isinf(x) or abs(x) >= 8388608.0:
        return a
    # Python's round() on a float is already ties-to-even
    return from_float(math.copysign(float(round(x)), x))


def floor(a: int) -> int:
    x = to_float(a)
    if x != x:
        return QNAN
    if math.isinf(x):
        return a
    return from_float(math.copysign(float(math.floor(x)), x))


def to_i32(a: int) -> int:
    x = to_float(a)
    if x != x:
        return 0
    if x >= 2147483648.0:
        return I32_MAX
    if x <= -2147483649.0:
        return I32_MIN
    return math.trunc(x)


def to_u8(a: int) -> int:
    x = to_float(a)
    if x != x or x <= 0.0:
        return 0
    if x >= 255.0:
        return 255
    return math.trunc(x)


def from_int(n: int) -> int:
    return from_float(float(n))


def i32_add(a: int, b: int) -> int:
    return ctypes.c_int32(a + b).value


def i32_sub(a: int, b: int) -> int:
    return ctypes.c_int32(a - b).value


def i32_mul(a: int, b: int) -> int:
    return ctypes.c_int32(a * b).value
