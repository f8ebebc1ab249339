"""Element types shared by tensors, circuits and the arbitrator."""

from __future__ import annotations

import enum


class DType(enum.Enum):
    F32 = "f32"
    I32 = "i32"
    U8 = "u8"

    @property
    def code(self) -> int:
        return _CODES[self]

    @classmethod
    def from_code(cls, code: int) -> "DType":
        for dt, c in _CODES.items():
            if c == code:
                return dt
        raise ValueError(f"unknown dtype code {code}")

    @classmethod
    def parse(cls, text: str) -> "DType":
        try:
            return cls(text.lower())
        except ValueError:
            raise ValueError(f"unknown dtype {text!r}") from None


_CODES = {DType.F32: 1, DType.I32: 2, DType.U8: 3}

I32_MIN = -(1 << 31)
I32_MAX = (1 << 31) - 1


def wrap_i32(x: int) -> int:
    return ((x + (1 << 31)) & 0xFFFFFFFF) - (1 << 31)


def to_u32(dtype: DType, value: int) -> int:
    """Raw 32-bit pattern of a scalar payload (f32 bits, i32 two's complement, u8)."""
    if dtype is DType.I32:
        return value & 0xFFFFFFFF
    return value


def from_u32(dtype: DType, word: int) -> int:
    if dtype is DType.I32:
        return wrap_i32(word)
    if dtype is DType.U8:
        if word > 0xFF:
            raise ValueError(f"u8 payload out of range: {word:#x}")
    return word
