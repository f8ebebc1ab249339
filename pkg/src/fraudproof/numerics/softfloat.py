"""IEEE-754 binary32 arithmetic using only integer operations.

This is the arbitrator's arithmetic. Every f32 value is carried as its 32-bit
pattern; results are exact big-integer computations rounded once to
nearest-even. NaN results are always the canonical quiet NaN ``0x7FC00000``.
"""

from __future__ import annotations

from math import isqrt

from ..dtypes import I32_MAX, I32_MIN

SIGN = 0x80000000
ABS = 0x7FFFFFFF
EXP_MASK = 0x7F800000
FRAC_MASK = 0x007FFFFF
INF = 0x7F800000
NEG_INF = 0xFF800000
QNAN = 0x7FC00000
NEG_ZERO = 0x80000000

_HIDDEN = 1 << 23
_MIN_Q = -149  # exponent of the smallest subnormal quantum


def is_nan(a: int) -> bool:
    return (a & ABS) > INF


def is_inf(a: int) -> bool:
    return (a & ABS) == INF


def is_zero(a: int) -> bool:
    return (a & ABS) == 0


def canonical(a: int) -> int:
    return QNAN if (a & ABS) > INF else a


def unpack(a: int) -> tuple[int, int, int]:
    """Finite ``a`` as ``(sign, m, e)`` with value ``(-1)**sign * m * 2**e``."""
    sign = a >> 31
    exp = (a >> 23) & 0xFF
    frac = a & FRAC_MASK
    if exp == 0:
        return sign, frac, _MIN_Q
    return sign, frac | _HIDDEN, exp - 150


def round_pack(sign: int, m: int, e: int, sticky: bool = False) -> int:
    """Round ``m * 2**e`` (plus an inexact tail when ``sticky``) to binary32."""
    if m == 0:
        return sign << 31
    top = e + m.bit_length() - 1
    q = max(top - 23, _MIN_Q)
    shift = q - e
    if shift <= 0:
        mant = m << -shift
    else:
        mant = m >> shift
        rem = m & ((1 << shift) - 1)
        half = 1 << (shift - 1)
        if rem > half or (rem == half and (sticky or (mant & 1))):
            mant += 1
        if mant == 1 << 24:
            mant >>= 1
            q += 1
    if mant < _HIDDEN:
        return (sign << 31) | mant
    biased = q + 150
    if biased >= 0xFF:
        return (sign << 31) | INF
    return (sign << 31) | (biased << 23) | (mant - _HIDDEN)


def add(a: int, b: int) -> int:
    if is_nan(a) or is_nan(b):
        return QNAN
    if is_inf(a):
        if is_inf(b) and (a ^ b) & SIGN:
            return QNAN
        return a
    if is_inf(b):
        return b
    sa, ma, ea = unpack(a)
    sb, mb, eb = unpack(b)
    e = min(ea, eb)
    va = ma << (ea - e)
    vb = mb << (eb - e)
    total = (-va if sa else va) + (-vb if sb else vb)
    if total == 0:
        # exact zero sum: -0 only when both addends are negative
        return NEG_ZERO if (sa and sb) else 0
    if total < 0:
        return round_pack(1, -total, e)
    return round_pack(0, total, e)


def sub(a: int, b: int) -> int:
    if is_nan(b):
        return QNAN
    return add(a, b ^ SIGN)


def mul(a: int, b: int) -> int:
    if is_nan(a) or is_nan(b):
        return QNAN
    sign = (a ^ b) >> 31
    if is_inf(a) or is_inf(b):
        if is_zero(a) or is_zero(b):
            return QNAN
        return (sign << 31) | INF
    if is_zero(a) or is_zero(b):
        return sign << 31
    _, ma, ea = unpack(a)
    _, mb, eb = unpack(b)
    return round_pack(sign, ma * mb, ea + eb)


def div(a: int, b: int) -> int:
    if is_nan(a) or is_nan(b):
        return QNAN
    sign = (a ^ b) >> 31
    if is_inf(a):
        if is_inf(b):
            return QNAN
        return (sign << 31) | INF
    if is_inf(b):
        return sign << 31
    if is_zero(b):
        if is_zero(a):
            return QNAN
        return (sign << 31) | INF
    if is_zero(a):
        return sign << 31
    _, ma, ea = unpack(a)
    _, mb, eb = unpack(b)
    shift = 64
    quo, rem = divmod(ma << shift, mb)
    return round_pack(sign, quo, ea - eb - shift, rem != 0)


def sqrt(a: int) -> int:
    if is_nan(a):
        return QNAN
    if is_zero(a):
        return a
    if a & SIGN:
        return QNAN
    if is_inf(a):
        return a
    _, m, e = unpack(a)
    if e & 1:
        m <<= 1
        e -= 1
    m <<= 64
    e -= 64
    root = isqrt(m)
    return round_pack(0, root, e // 2, root * root != m)


def _order_key(a: int) -> int:
    # monotone in the real order with -0 < +0
    if a & SIGN:
        return ABS - (a & ABS)
    return a | SIGN


def minimum(a: int, b: int) -> int:
    if is_nan(a) or is_nan(b):
        return QNAN
    return a if _order_key(a) <= _order_key(b) else b


def maximum(a: int, b: int) -> int:
    if is_nan(a) or is_nan(b):
        return QNAN
    return a if _order_key(a) >= _order_key(b) else b


def _integral_parts(a: int) -> tuple[int, int, int, int] | None:
    """``(sign, int_part, rem, shift)`` for finite nonzero ``a`` with a fraction."""
    sign, m, e = unpack(a)
    if e >= 0:
        return None
    shift = -e
    return sign, m >> shift, m & ((1 << shift) - 1), shift


def round_even(a: int) -> int:
    if is_nan(a):
        return QNAN
    if is_inf(a) or is_zero(a):
        return a
    parts = _integral_parts(a)
    if parts is None:
        return a
    sign, n, rem, shift = parts
    half = 1 << (shift - 1)
    if rem > half or (rem == half and (n & 1)):
        n += 1
    return round_pack(sign, n, 0)


def floor(a: int) -> int:
    if is_nan(a):
        return QNAN
    if is_inf(a) or is_zero(a):
        return a
    parts = _integral_parts(a)
    if parts is None:
        return a
    sign, n, rem, _ = parts
    if sign and rem:
        n += 1
    return round_pack(sign, n, 0)


def _trunc_int(a: int) -> int:
    sign, m, e = unpack(a)
    n = m << e if e >= 0 else m >> -e
    return -n if sign else n


def to_i32(a: int) -> int:
    if is_nan(a):
        return 0
    if is_inf(a):
        return I32_MIN if a & SIGN else I32_MAX
    n = _trunc_int(a)
    if n > I32_MAX:
        return I32_MAX
    if n < I32_MIN:
        return I32_MIN
    return n


def to_u8(a: int) -> int:
    if is_nan(a):
        return 0
    if is_inf(a):
        return 0 if a & SIGN else 255
    n = _trunc_int(a)
    if n > 255:
        return 255
    if n < 0:
        return 0
    return n


def from_int(n: int) -> int:
    if n < 0:
        return round_pack(1, -n, 0)
    return round_pack(0, n, 0)


def i32_add(a: int, b: int) -> int:
    return ((a + b + (1 << 31)) & 0xFFFFFFFF) - (1 << 31)


def i32_sub(a: int, b: int) -> int:
    return ((a - b + (1 << 31)) & 0xFFFFFFFF) - (1 << 31)


def i32_mul(a: int, b: int) -> int:
    return ((a * b + (1 << 31)) & 0xFFFFFFFF) - (1 << 31)
