"""Bit-exact scalar semantics for the basic operations."""

from .bops import BopKind, ScalarValue, eval_bop, result_dtype
from .corners import gen_corner_cases

__all__ = ["BopKind", "ScalarValue", "eval_bop", "gen_corner_cases", "result_dtype"]
