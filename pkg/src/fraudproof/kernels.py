"""Native tensor kernels.

f32 kernels use numpy's binary32 ufuncs, which are correctly rounded and keep
subnormals, and reduce strictly left to right, vectorizing only across
independent outputs. i32 kernels accumulate in int64 and wrap, in any order.
NaNs are canonicalized once at every kernel output. A start-up self-test on
corner cases swaps the elementwise f32 primitives for the scalar reference
path if the host arithmetic disagrees.
"""

from __future__ import annotations

import contextlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Iterator, Sequence

import numpy as np

from .dtypes import DType
from .graph import (
    NUMPY_DTYPES, OpNode, Tensor, TensorMeta, conv_geometry, f32_attribute, gemm_dims, infer_node,
    normalized_attributes,
)
from .circuit import pool_windows, reduction_groups
from .numerics import reference, softfloat
from .numerics.bops import BopKind

_F32 = np.float32
_QNAN = np.uint32(0x7FC00000)


@dataclass
class KernelContext:
    threads: int = 1
    pool: ThreadPoolExecutor | None = None

    def map(self, fn: Callable[[Any], Any], items: Sequence[Any]) -> list[Any]:
        if self.pool is None or self.threads <= 1 or len(items) <= 1:
            return [fn(x) for x in items]
        return list(self.pool.map(fn, items))


SEQUENTIAL = KernelContext()


def canon(a: np.ndarray) -> np.ndarray:
    bits = a.view(np.uint32)
    nan = (bits & np.uint32(0x7FFFFFFF)) > np.uint32(0x7F800000)
    if nan.any():
        bits = np.where(nan, _QNAN, bits)
    return bits.view(_F32)


def f32_scalar(bits: int) -> np.ndarray:
    return np.array([bits], dtype=np.uint32).view(_F32)[0:1].reshape(())


# --- elementwise f32 primitives (host fast path) ---------------------------

def _fast_add(a, b):
    return a + b


def _fast_sub(a, b):
    return a - b


def _fast_mul(a, b):
    return a * b


def _fast_div(a, b):
    return a / b


def _pick(a: np.ndarray, b: np.ndarray, minimum: bool) -> np.ndarray:
    """NaN-propagating min/max with -0 < +0, without a comparison-only idiom."""
    a, b = np.broadcast_arrays(np.asarray(a, _F32), np.asarray(b, _F32))
    ab, bb = a.view(np.uint32), b.view(np.uint32)
    lt, gt = (a < b), (a > b)
    # equal values: bits agree except for signed zeros, where OR yields -0 and AND +0
    tie = (ab | bb) if minimum else (ab & bb)
    first = lt if minimum else gt
    second = gt if minimum else lt
    out = np.where(first, ab, np.where(second, bb, tie))
    nan = np.isnan(a) | np.isnan(b)
    return np.where(nan, _QNAN, out).view(_F32)


def _fast_min(a, b):
    return _pick(a, b, True)


def _fast_max(a, b):
    return _pick(a, b, False)


def _fast_sqrt(a):
    return np.sqrt(a)


def _fast_round(a):
    return np.rint(a)


def _fast_floor(a):
    return np.floor(a)


def _scalar_version(kind: BopKind) -> Callable[..., np.ndarray]:
    fn = {BopKind.F32_ADD: reference.add, BopKind.F32_SUB: reference.sub,
          BopKind.F32_MUL: reference.mul, BopKind.F32_DIV: reference.div,
          BopKind.F32_MIN: reference.minimum, BopKind.F32_MAX: reference.maximum,
          BopKind.F32_SQRT: reference.sqrt, BopKind.F32_ROUND: reference.round_even,
          BopKind.F32_FLOOR: reference.floor}[kind]

    def run(*arrays):
        arrs = np.broadcast_arrays(*[np.asarray(x, _F32) for x in arrays])
        flat = [x.reshape(-1).view(np.uint32).tolist() for x in arrs]
        out = [fn(*vals) for vals in zip(*flat)]
        return np.array(out, dtype=np.uint32).view(_F32).reshape(arrs[0].shape)
    return run


PRIMS: dict[BopKind, Callable[..., np.ndarray]] = {
    BopKind.F32_ADD: _fast_add, BopKind.F32_SUB: _fast_sub, BopKind.F32_MUL: _fast_mul,
    BopKind.F32_DIV: _fast_div, BopKind.F32_MIN: _fast_min, BopKind.F32_MAX: _fast_max,
    BopKind.F32_SQRT: _fast_sqrt, BopKind.F32_ROUND: _fast_round, BopKind.F32_FLOOR: _fast_floor,
}


def prim(kind: BopKind, *args: np.ndarray) -> np.ndarray:
    with np.errstate(all="ignore"):
        return PRIMS[kind](*args)


# --- casts -----------------------------------------------------------------

def f32_to_i32(x: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):  # signalling NaNs
        d = np.asarray(x, np.float64)
        t = np.trunc(np.nan_to_num(d, nan=0.0, posinf=3e9, neginf=-3e9))
    t = np.clip(t, -2147483648.0, 2147483647.0)
    return t.astype(np.int32)


def f32_to_u8(x: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        d = np.asarray(x, np.float64)
    t = np.trunc(np.nan_to_num(d, nan=0.0, posinf=255.0, neginf=0.0))
    return np.clip(t, 0.0, 255.0).astype(np.uint8)


def to_f32(x: np.ndarray) -> np.ndarray:
    # int32 -> float32 rounds to nearest even; u8 is exact
    return np.asarray(x).astype(_F32)


def wrap32(x: np.ndarray) -> np.ndarray:
    return (np.asarray(x, np.int64) & 0xFFFFFFFF).astype(np.uint32).view(np.int32)


def widen(t: np.ndarray, zero_point: np.ndarray | None) -> np.ndarray:
    out = np.asarray(t, np.int64)
    if zero_point is not None:
        out = out - np.int64(np.asarray(zero_point).reshape(-1)[0])
    return out


# --- kernels ---------------------------------------------------------------

Kernel = Callable[[list[Tensor], dict[str, Any], TensorMeta, KernelContext], np.ndarray]

_BIN_KIND = {"Add": BopKind.F32_ADD, "Sub": BopKind.F32_SUB, "Mul": BopKind.F32_MUL,
             "Div": BopKind.F32_DIV, "Min": BopKind.F32_MIN, "Max": BopKind.F32_MAX}


def _elementwise(name: str) -> Kernel:
    def run(ins, attrs, out, ctx):
        a, b = ins[0].data, np.broadcast_to(ins[1].data, ins[0].shape)
        if ins[0].dtype is DType.I32:
            op = {"Add": np.add, "Sub": np.subtract, "Mul": np.multiply}[name]
            return wrap32(op(a.astype(np.int64), b.astype(np.int64)))
        return prim(_BIN_KIND[name], a, b)
    return run


def _relu(ins, attrs, out, ctx):
    return prim(BopKind.F32_MAX, ins[0].data, f32_scalar(0))


def _clip(ins, attrs, out, ctx):
    y = ins[0].data
    if attrs.get("min") is not None:
        y = prim(BopKind.F32_MAX, y, f32_scalar(f32_attribute(attrs["min"])))
    if attrs.get("max") is not None:
        y = prim(BopKind.F32_MIN, y, f32_scalar(f32_attribute(attrs["max"])))
    return y.copy()


def left_fold(kind: BopKind, terms: np.ndarray) -> np.ndarray:
    """Fold the last axis strictly left to right."""
    acc = terms[..., 0]
    for i in range(1, terms.shape[-1]):
        acc = prim(kind, acc, terms[..., i])
    return acc


def _pool(average: bool) -> Kernel:
    def run(ins, attrs, out, ctx):
        x = ins[0].data
        kh, kw = attrs["kernel_shape"]
        sh, sw = attrs["strides"]
        win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
        terms = win.reshape(win.shape[:4] + (kh * kw,))
        if average:
            acc = left_fold(BopKind.F32_ADD, terms)
            return prim(BopKind.F32_DIV, acc, f32_scalar(f32_attribute(float(kh * kw))))
        return left_fold(BopKind.F32_MAX, terms)
    return run


def _reduce(maximum: bool) -> Kernel:
    def run(ins, attrs, out, ctx):
        x = ins[0]
        groups, out_shape = reduction_groups(x.shape, attrs)
        terms = x.data.reshape(-1)[groups]
        if x.dtype is DType.I32:
            return wrap32(terms.astype(np.int64).sum(axis=1)).reshape(out_shape)
        kind = BopKind.F32_MAX if maximum else BopKind.F32_ADD
        return left_fold(kind, terms).reshape(out_shape)
    return run


def f32_dot(a: np.ndarray, w: np.ndarray) -> np.ndarray:
    """(.., M, K) x (K, N): every product first, then each chain left to right."""
    products = prim(BopKind.F32_MUL, a[..., :, None, :], w.T[None, :, :])
    return left_fold(BopKind.F32_ADD, products)


def _matmul(ins, attrs, out, ctx):
    return f32_dot(ins[0].data, ins[1].data)


def _gemm(ins, attrs, out, ctx):
    a, w = ins[0].data, ins[1].data
    a = a.T if attrs["transA"] else a
    w = w.T if attrs["transB"] else w
    y = prim(BopKind.F32_MUL, f32_dot(a, w), f32_scalar(f32_attribute(attrs["alpha"])))
    if len(ins) == 3:
        c = np.broadcast_to(ins[2].data, out.shape)
        cb = prim(BopKind.F32_MUL, c, f32_scalar(f32_attribute(attrs["beta"])))
        y = prim(BopKind.F32_ADD, y, cb)
    return y


def _row_chunks(n: int, parts: int) -> list[slice]:
    parts = max(1, min(parts, n))
    bounds = [n * i // parts for i in range(parts + 1)]
    return [slice(bounds[i], bounds[i + 1]) for i in range(parts)]


def int_matmul(a: np.ndarray, w: np.ndarray, ctx: KernelContext) -> np.ndarray:
    def rows(s: slice) -> np.ndarray:
        return a[s] @ w
    parts = ctx.map(rows, _row_chunks(a.shape[0], ctx.threads))
    return wrap32(np.concatenate(parts, axis=0))


def _matmul_integer(ins, attrs, out, ctx):
    a = widen(ins[0].data, ins[2].data if len(ins) > 2 else None)
    w = widen(ins[1].data, ins[3].data if len(ins) > 3 else None)
    return INT_ACCUMULATE["matmul"](a, w, ctx)


def int_conv(x: np.ndarray, w: np.ndarray, geom: tuple[int, ...], ctx: KernelContext) -> np.ndarray:
    n, c, h, wd, m, kh, kw, sh, sw, pt, pl, oh, ow = geom
    padded = np.zeros((n, c, h + pt + kh + sh * oh, wd + pl + kw + sw * ow), dtype=np.int64)
    padded[:, :, pt:pt + h, pl:pl + wd] = x
    win = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(2, 3))
    win = win[:, :, :(oh - 1) * sh + 1:sh, :(ow - 1) * sw + 1:sw]  # n c oh ow kh kw
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    wmat = w.reshape(m, c * kh * kw).T
    res = int_matmul(cols, wmat, ctx)  # (n*oh*ow, m)
    return res.reshape(n, oh, ow, m).transpose(0, 3, 1, 2)


def _conv_integer(ins, attrs, out, ctx):
    geom = conv_geometry(ins[0].meta, ins[1].meta, attrs)
    x = widen(ins[0].data, ins[2].data if len(ins) > 2 else None)
    w = widen(ins[1].data, ins[3].data if len(ins) > 3 else None)
    return INT_ACCUMULATE["conv"](x, w, geom, ctx)


def _batchnorm(ins, attrs, out, ctx):
    x = ins[0].data
    shape = (1, -1) + (1,) * (x.ndim - 2)
    gamma, beta, mean, var = (t.data.reshape(shape) for t in ins[1:])
    eps = f32_scalar(f32_attribute(attrs["epsilon"]))
    denom = prim(BopKind.F32_SQRT, prim(BopKind.F32_ADD, var, eps))
    y = prim(BopKind.F32_SUB, x, mean)
    y = prim(BopKind.F32_DIV, y, denom)
    y = prim(BopKind.F32_MUL, y, gamma)
    return prim(BopKind.F32_ADD, y, beta)


def cast_array(x: np.ndarray, src: DType, dst: DType) -> np.ndarray:
    if src is dst:
        return x.copy()
    if dst is DType.F32:
        return to_f32(x)
    if dst is DType.I32:
        return f32_to_i32(x) if src is DType.F32 else x.astype(np.int32)
    return f32_to_u8(x)


def _cast(ins, attrs, out, ctx):
    return cast_array(ins[0].data, ins[0].dtype, out.dtype)


def _quantize(ins, attrs, out, ctx):
    x, scale = ins[0].data, ins[1].data.reshape(())
    zp = to_f32(ins[2].data.reshape(())) if len(ins) > 2 else f32_scalar(0)
    y = prim(BopKind.F32_DIV, x, scale)
    y = prim(BopKind.F32_ROUND, y)
    y = prim(BopKind.F32_ADD, y, zp)
    y = prim(BopKind.F32_MAX, y, f32_scalar(0))
    y = prim(BopKind.F32_MIN, y, f32_scalar(0x437F0000))
    return f32_to_u8(y)


def _dequantize(ins, attrs, out, ctx):
    x = to_f32(ins[0].data)
    zp = to_f32(ins[2].data.reshape(())) if len(ins) > 2 else f32_scalar(0)
    y = prim(BopKind.F32_SUB, x, zp)
    return prim(BopKind.F32_MUL, y, ins[1].data.reshape(()))


KERNELS: dict[str, Kernel] = {
    "Add": _elementwise("Add"), "Sub": _elementwise("Sub"), "Mul": _elementwise("Mul"),
    "Div": _elementwise("Div"), "Min": _elementwise("Min"), "Max": _elementwise("Max"),
    "Relu": _relu, "Clip": _clip,
    "MaxPool": _pool(average=False), "AveragePool": _pool(average=True),
    "ReduceSum": _reduce(maximum=False), "ReduceMax": _reduce(maximum=True),
    "MatMul": _matmul, "Gemm": _gemm, "MatMulInteger": _matmul_integer,
    "ConvInteger": _conv_integer, "BatchNormalization": _batchnorm, "Cast": _cast,
    "QuantizeLinear": _quantize, "DequantizeLinear": _dequantize,
}

INT_ACCUMULATE: dict[str, Callable[..., np.ndarray]] = {"matmul": int_matmul, "conv": int_conv}


def run_kernel(node: OpNode, inputs: list[Tensor], ctx: KernelContext = SEQUENTIAL) -> Tensor:
    out_meta = infer_node(node, [t.meta for t in inputs])
    attrs = normalized_attributes(node)
    data = KERNELS[node.kind](inputs, attrs, out_meta, ctx)
    data = np.asarray(data, dtype=NUMPY_DTYPES[out_meta.dtype]).reshape(out_meta.shape)
    if out_meta.dtype is DType.F32:
        data = canon(np.ascontiguousarray(data))
    return Tensor(out_meta.dtype, out_meta.shape, data)


@contextlib.contextmanager
def override_kernel(kind: str, kernel: Kernel) -> Iterator[None]:
    """Temporarily replace one kernel (used for mutation testing)."""
    saved = KERNELS[kind]
    KERNELS[kind] = kernel
    try:
        yield
    finally:
        KERNELS[kind] = saved


@contextlib.contextmanager
def override_int_accumulation(name: str, fn: Callable[..., np.ndarray]) -> Iterator[None]:
    saved = INT_ACCUMULATE[name]
    INT_ACCUMULATE[name] = fn
    try:
        yield
    finally:
        INT_ACCUMULATE[name] = saved


# --- start-up self-test ----------------------------------------------------

_SELFTEST_PATTERNS = [
    0x00000000, 0x80000000, 0x00000001, 0x80000001, 0x007FFFFF, 0x00800000, 0x7F7FFFFF,
    0xFF7FFFFF, 0x3F800000, 0xBF800000, 0x3FC00000, 0x40200000, 0xC0200000, 0x3F000000,
    0xBF000000, 0x4B800000, 0x4B800001, 0x33800000, 0x7F800000, 0xFF800000, 0x7FC00000,
    0x7F800001, 0xFFC00000, 0x3DCCCCCD, 0x4AFFFFFF, 0xCAFFFFFF,
]

_EMULATED = {BopKind.F32_ADD: softfloat.add, BopKind.F32_SUB: softfloat.sub,
             BopKind.F32_MUL: softfloat.mul, BopKind.F32_DIV: softfloat.div,
             BopKind.F32_MIN: softfloat.minimum, BopKind.F32_MAX: softfloat.maximum,
             BopKind.F32_SQRT: softfloat.sqrt, BopKind.F32_ROUND: softfloat.round_even,
             BopKind.F32_FLOOR: softfloat.floor}


def self_test() -> list[BopKind]:
    """Primitives whose host results disagree with the integer emulation on corner cases."""
    bits = np.array(_SELFTEST_PATTERNS, dtype=np.uint32)
    a = np.repeat(bits, len(bits))
    b = np.tile(bits, len(bits))
    failing = []
    for kind, fn in _EMULATED.items():
        args = (a, b) if kind.arity == 2 else (bits,)
        got = canon(np.ascontiguousarray(prim(kind, *(x.view(_F32) for x in args)))).view(np.uint32)
        want = [fn(*vals) for vals in zip(*(x.tolist() for x in args))]
        if got.tolist() != want:
            failing.append(kind)
    return failing


FALLBACK: list[BopKind] = []


def install_fallbacks() -> list[BopKind]:
    """Run the self-test and route failing primitives through the scalar reference."""
    failing = self_test()
    for kind in failing:
        PRIMS[kind] = _scalar_version(kind)
    FALLBACK[:] = failing
    return failing


install_fallbacks()
