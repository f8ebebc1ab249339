"""Deterministic corner-case suites for the f32-involving basic operations."""

from __future__ import annotations

import random
from typing import Iterable, Iterator

from ..dtypes import DType, I32_MAX, I32_MIN
from .bops import SIGNATURES, BopKind, ScalarValue, eval_bop

CORNER_SEED = 0x5EED
MIN_CASES = 7500

# magnitudes used with both signs
_MAGNITUDES = [
    0x00000000, 0x00000001, 0x00000002, 0x007FFFFF, 0x00400000,
    0x00800000, 0x00800001, 0x7F7FFFFF, 0x7F7FFFFE,
    0x3F800000, 0x3F800001, 0x3F7FFFFF, 0x3FC00000, 0x3F000000, 0x40200000, 0x40000000,
    0x4B800000, 0x4B7FFFFF, 0x4B800001,  # 2**24 and neighbours
    0x33800000, 0x337FFFFF, 0x33800001,  # 2**-24 and neighbours
    0x437F0000, 0x437F8000,              # 255, 255.5
    0x4F000000, 0x4EFFFFFF,              # 2**31 and below
    0x7F800000, 0x3DCCCCCD, 0x4B000000, 0x4AFFFFFF,
]
_NANS = [0x7FC00000, 0xFFC00000, 0x7F800001, 0xFF800001, 0x7FFFFFFF, 0x7FA00000]
_N_RANDOM = 21

_I32_SPECIALS = [
    0, 1, -1, 2, -2, 255, 256, (1 << 24) - 1, 1 << 24, (1 << 24) + 1, (1 << 24) + 3,
    -(1 << 24) - 1, (1 << 25) + 1, (1 << 30) + 64, I32_MAX, I32_MAX - 64, I32_MIN, I32_MIN + 1,
]


def special_pool(seed: int = CORNER_SEED) -> list[int]:
    """87 f32 bit patterns: signed specials, NaN encodings and seeded random patterns."""
    pool = list(_MAGNITUDES) + [m | 0x80000000 for m in _MAGNITUDES] + list(_NANS)
    rng = random.Random(seed)
    seen = set(pool)
    while len(pool) < len(_MAGNITUDES) * 2 + len(_NANS) + _N_RANDOM:
        bits = rng.getrandbits(32)
        if bits not in seen:
            seen.add(bits)
            pool.append(bits)
    return pool


def _fill_unary(base: list[int], draw, target: int) -> list[int]:
    out = list(base)
    seen = set(out)
    while len(out) < target:
        v = draw()
        if v not in seen:
            seen.add(v)
            out.append(v)
    return out


def gen_corner_cases(kind: BopKind, seed: int = CORNER_SEED) -> list[tuple[ScalarValue, ...]]:
    """Operand tuples for ``kind``; empty for the pure-integer kinds."""
    if kind is BopKind.ASSIGN:
        operand_dtypes: tuple[DType, ...] = (DType.F32,)
    else:
        operand_dtypes = SIGNATURES[kind][0]
    out_dtype = DType.F32 if kind is BopKind.ASSIGN else SIGNATURES[kind][1]
    if DType.F32 not in operand_dtypes and out_dtype is not DType.F32:
        return []
    rng = random.Random(seed * 1000 + kind.code)
    if operand_dtypes == (DType.F32, DType.F32):
        pool = special_pool(seed)
        return [(ScalarValue.f32(a), ScalarValue.f32(b)) for a in pool for b in pool]
    if operand_dtypes == (DType.F32,):
        bits = _fill_unary(special_pool(seed), lambda: _biased_f32(rng), MIN_CASES)
        return [(ScalarValue.f32(b),) for b in bits]
    if operand_dtypes == (DType.U8,):
        return [(ScalarValue.u8(n),) for n in range(256)]
    # i32 -> f32
    ints = _fill_unary(_I32_SPECIALS, lambda: _biased_i32(rng), MIN_CASES)
    return [(ScalarValue.i32(n),) for n in ints]


def _biased_f32(rng: random.Random) -> int:
    """Random pattern, half of the time with an exponent near a boundary."""
    if rng.random() < 0.5:
        return rng.getrandbits(32)
    exp = rng.choice((0, 1, 2, 100, 125, 126, 127, 128, 149, 150, 151, 157, 158, 253, 254, 255))
    return (rng.getrandbits(1) << 31) | (exp << 23) | rng.getrandbits(23)


def _biased_i32(rng: random.Random) -> int:
    width = rng.choice((8, 16, 24, 25, 26, 31, 32))
    n = rng.getrandbits(width)
    if width == 32:
        n -= 1 << 31
    elif rng.random() < 0.5:
        n = -n
    return n


def random_operands(kind: BopKind, rng: random.Random) -> tuple[ScalarValue, ...]:
    """One random operand tuple matching ``kind``'s signature."""
    dtypes = (DType.F32,) if kind is BopKind.ASSIGN else SIGNATURES[kind][0]
    out = []
    for dt in dtypes:
        if dt is DType.F32:
            out.append(ScalarValue.f32(_biased_f32(rng)))
        elif dt is DType.I32:
            out.append(ScalarValue.i32(_biased_i32(rng)))
        else:
            out.append(ScalarValue.u8(rng.getrandbits(8)))
    return tuple(out)


def iter_random_suite(n: int, seed: int) -> Iterator[tuple[BopKind, tuple[ScalarValue, ...]]]:
    """``n`` random cases cycling through all eighteen kinds."""
    rng = random.Random(seed)
    kinds = list(BopKind)
    for i in range(n):
        kind = kinds[i % len(kinds)]
        yield kind, random_operands(kind, rng)


def format_case(kind: BopKind, operands: Iterable[ScalarValue]) -> str:
    ops = list(operands)
    expected = eval_bop(kind, ops, path="emulated")
    fields = [kind.value] + [f"0x{op.word:08x}" for op in ops] + [f"0x{expected.word:08x}"]
    return ",".join(fields)


def export_cases(kind: BopKind, seed: int = CORNER_SEED) -> str:
    """Corner suite of ``kind`` as text, one ``kind,operands...,expected`` line per case."""
    lines = [format_case(kind, ops) for ops in gen_corner_cases(kind, seed)]
    return "\n".join(lines) + ("\n" if lines else "")
