"""The eighteen basic operations and their two interchangeable evaluators.

``EMULATED`` is the integer-only arbitrator path, ``REFERENCE`` the host path
the circuit evaluator uses. Both operate on raw payloads: f32 as its bit
pattern, i32 as a signed int, u8 as an int in [0, 255].
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Sequence

from ..dtypes import DType, from_u32, to_u32
from . import reference, softfloat


class BopKind(enum.Enum):
    F32_ADD = "f32_add"
    F32_SUB = "f32_sub"
    F32_MUL = "f32_mul"
    F32_DIV = "f32_div"
    F32_MIN = "f32_min"
    F32_MAX = "f32_max"
    F32_SQRT = "f32_sqrt"
    F32_ROUND = "f32_round"
    F32_FLOOR = "f32_floor"
    I32_ADD = "i32_add"
    I32_SUB = "i32_sub"
    I32_MUL = "i32_mul"
    ASSIGN = "assign"
    F32_TO_U8 = "f32_to_u8"
    U8_TO_F32 = "u8_to_f32"
    U8_TO_I32 = "u8_to_i32"
    I32_TO_F32 = "i32_to_f32"
    F32_TO_I32 = "f32_to_i32"

    @property
    def code(self) -> int:
        return _ORDER.index(self) + 1

    @classmethod
    def from_code(cls, code: int) -> "BopKind":
        if not 1 <= code <= len(_ORDER):
            raise ValueError(f"unknown basic-operation code {code}")
        return _ORDER[code - 1]

    @property
    def arity(self) -> int:
        return 2 if self in _BINARY else 1

    @property
    def symbol(self) -> str:
        return _SYMBOLS.get(self, self.value)


_ORDER = list(BopKind)
_BINARY = {
    BopKind.F32_ADD, BopKind.F32_SUB, BopKind.F32_MUL, BopKind.F32_DIV,
    BopKind.F32_MIN, BopKind.F32_MAX, BopKind.I32_ADD, BopKind.I32_SUB, BopKind.I32_MUL,
}
_SYMBOLS = {
    BopKind.F32_ADD: "+f", BopKind.F32_SUB: "-f", BopKind.F32_MUL: "*f", BopKind.F32_DIV: "/f",
    BopKind.I32_ADD: "+", BopKind.I32_SUB: "-", BopKind.I32_MUL: "x", BopKind.ASSIGN: "=",
}

F32, I32, U8 = DType.F32, DType.I32, DType.U8

# operand dtypes -> result dtype; ASSIGN is dtype-polymorphic and handled apart
SIGNATURES: dict[BopKind, tuple[tuple[DType, ...], DType]] = {
    BopKind.F32_ADD: ((F32, F32), F32),
    BopKind.F32_SUB: ((F32, F32), F32),
    BopKind.F32_MUL: ((F32, F32), F32),
    BopKind.F32_DIV: ((F32, F32), F32),
    BopKind.F32_MIN: ((F32, F32), F32),
    BopKind.F32_MAX: ((F32, F32), F32),
    BopKind.F32_SQRT: ((F32,), F32),
    BopKind.F32_ROUND: ((F32,), F32),
    BopKind.F32_FLOOR: ((F32,), F32),
    BopKind.I32_ADD: ((I32, I32), I32),
    BopKind.I32_SUB: ((I32, I32), I32),
    BopKind.I32_MUL: ((I32, I32), I32),
    BopKind.F32_TO_U8: ((F32,), U8),
    BopKind.U8_TO_F32: ((U8,), F32),
    BopKind.U8_TO_I32: ((U8,), I32),
    BopKind.I32_TO_F32: ((I32,), F32),
    BopKind.F32_TO_I32: ((F32,), I32),
}


def result_dtype(kind: BopKind, operand_dtypes: Sequence[DType]) -> DType:
    """Result dtype, raising ``TypeError`` on a signature mismatch."""
    if kind is BopKind.ASSIGN:
        if len(operand_dtypes) != 1:
            raise TypeError(f"assign takes 1 operand, got {len(operand_dtypes)}")
        return operand_dtypes[0]
    expected, out = SIGNATURES[kind]
    if tuple(operand_dtypes) != expected:
        got = ", ".join(d.value for d in operand_dtypes)
        want = ", ".join(d.value for d in expected)
        raise TypeError(f"{kind.value} expects ({want}), got ({got})")
    return out


def _assign_emulated(a: int) -> int:
    return a


def _identity(a: int) -> int:
    return a


def _u8_to_i32(a: int) -> int:
    return a


RawFn = Callable[..., int]

EMULATED: dict[BopKind, RawFn] = {
    BopKind.F32_ADD: softfloat.add,
    BopKind.F32_SUB: softfloat.sub,
    BopKind.F32_MUL: softfloat.mul,
    BopKind.F32_DIV: softfloat.div,
    BopKind.F32_MIN: softfloat.minimum,
    BopKind.F32_MAX: softfloat.maximum,
    BopKind.F32_SQRT: softfloat.sqrt,
    BopKind.F32_ROUND: softfloat.round_even,
    BopKind.F32_FLOOR: softfloat.floor,
    BopKind.I32_ADD: softfloat.i32_add,
    BopKind.I32_SUB: softfloat.i32_sub,
    BopKind.I32_MUL: softfloat.i32_mul,
    BopKind.ASSIGN: _assign_emulated,
    BopKind.F32_TO_U8: softfloat.to_u8,
    BopKind.U8_TO_F32: softfloat.from_int,
    BopKind.U8_TO_I32: _u8_to_i32,
    BopKind.I32_TO_F32: softfloat.from_int,
    BopKind.F32_TO_I32: softfloat.to_i32,
}

REFERENCE: dict[BopKind, RawFn] = {
    BopKind.F32_ADD: reference.add,
    BopKind.F32_SUB: reference.sub,
    BopKind.F32_MUL: reference.mul,
    BopKind.F32_DIV: reference.div,
    BopKind.F32_MIN: reference.minimum,
    BopKind.F32_MAX: reference.maximum,
    BopKind.F32_SQRT: reference.sqrt,
    BopKind.F32_ROUND: reference.round_even,
    BopKind.F32_FLOOR: reference.floor,
    BopKind.I32_ADD: reference.i32_add,
    BopKind.I32_SUB: reference.i32_sub,
    BopKind.I32_MUL: reference.i32_mul,
    BopKind.ASSIGN: _identity,
    BopKind.F32_TO_U8: reference.to_u8,
    BopKind.U8_TO_F32: reference.from_int,
    BopKind.U8_TO_I32: _u8_to_i32,
    BopKind.I32_TO_F32: reference.from_int,
    BopKind.F32_TO_I32: reference.to_i32,
}


def raw_fn(kind: BopKind, dtype: DType, path: str = "reference") -> RawFn:
    """Raw evaluator for ``kind``; ``dtype`` only matters for assign (NaN canonicalization)."""
    table = EMULATED if path == "emulated" else REFERENCE
    if kind is BopKind.ASSIGN and dtype is DType.F32:
        return softfloat.canonical if path == "emulated" else _canonical_reference
    return table[kind]


def _canonical_reference(a: int) -> int:
    x = reference.to_float(a)
    return reference.QNAN if x != x else a


@dataclass(frozen=True)
class ScalarValue:
    dtype: DType
    payload: int

    def __post_init__(self) -> None:
        lo, hi = _RANGES[self.dtype]
        if not lo <= self.payload <= hi:
            raise ValueError(f"{self.dtype.value} payload out of range: {self.payload}")

    @classmethod
    def f32(cls, bits: int) -> "ScalarValue":
        return cls(DType.F32, bits)

    @classmethod
    def from_float(cls, x: float) -> "ScalarValue":
        return cls(DType.F32, reference.from_float(x))

    @classmethod
    def i32(cls, n: int) -> "ScalarValue":
        return cls(DType.I32, n)

    @classmethod
    def u8(cls, n: int) -> "ScalarValue":
        return cls(DType.U8, n)

    @property
    def word(self) -> int:
        return to_u32(self.dtype, self.payload)

    @classmethod
    def from_word(cls, dtype: DType, word: int) -> "ScalarValue":
        return cls(dtype, from_u32(dtype, word))

    def as_float(self) -> float:
        if self.dtype is DType.F32:
            return reference.to_float(self.payload)
        return float(self.payload)

    def __str__(self) -> str:
        if self.dtype is DType.F32:
            return f"{self.as_float()!r}f"
        return f"{self.payload}{'' if self.dtype is DType.I32 else 'u8'}"


_RANGES = {
    DType.F32: (0, 0xFFFFFFFF),
    DType.I32: (-(1 << 31), (1 << 31) - 1),
    DType.U8: (0, 255),
}


def eval_bop(kind: BopKind, operands: Sequence[ScalarValue], path: str = "emulated") -> ScalarValue:
    """Evaluate one basic operation.

    ``path`` selects ``"emulated"`` (integer-only, the arbitrator) or
    ``"reference"`` (host floats). Raises ``TypeError`` on a signature mismatch;
    NaN and infinities are ordinary values.
    """
    out_dtype = result_dtype(kind, [op.dtype for op in operands])
    fn = raw_fn(kind, out_dtype, path)
    return ScalarValue(out_dtype, fn(*(op.payload for op in operands)))
