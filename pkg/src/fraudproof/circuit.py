"""Lowering of graph operations to basic-operation circuits.

Variables are dense integers: the first ``n_inputs`` are the flattened input
tensors of the operation (in input order, row-major), then vertex ``t``
(0-based) defines variable ``n_inputs + t``. Operands are variable ids or
``Const`` literals. Float reductions are chained strictly left to right and
integer kernels use the same canonical order.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence, Union

import numpy as np

from .dtypes import DType
from .graph import (
    Graph, OpNode, TensorMeta, conv_geometry, f32_attribute, gemm_dims, normalized_attributes,
    reduce_axes,
)
from .numerics.bops import BopKind, ScalarValue, result_dtype

B = BopKind


@dataclass(frozen=True)
class Const:
    value: ScalarValue

    @property
    def dtype(self) -> DType:
        return self.value.dtype

    def __str__(self) -> str:
        return f"#{self.value}"


Operand = Union[int, Const]


@dataclass(frozen=True)
class Vertex:
    kind: BopKind
    operands: tuple[Operand, ...]
    dtype: DType


@dataclass
class Circuit:
    input_metas: tuple[TensorMeta, ...]
    output_meta: TensorMeta
    vertices: list[Vertex]
    outputs: tuple[int, ...]
    _input_dtypes: tuple[DType, ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self) -> None:
        dts: list[DType] = []
        for m in self.input_metas:
            dts.extend([m.dtype] * m.numel)
        self._input_dtypes = tuple(dts)

    @property
    def n_inputs(self) -> int:
        return len(self._input_dtypes)

    @property
    def n_outputs(self) -> int:
        return len(self.outputs)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def var_dtype(self, var: int) -> DType:
        if var < self.n_inputs:
            return self._input_dtypes[var]
        return self.vertices[var - self.n_inputs].dtype

    def input_offsets(self) -> list[tuple[int, int]]:
        """(first var, numel) of every input tensor."""
        out, off = [], 0
        for m in self.input_metas:
            out.append((off, m.numel))
            off += m.numel
        return out

    def structure(self) -> tuple:
        return (self.input_metas, self.output_meta, tuple(self.vertices), self.outputs)

    def kind_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for v in self.vertices:
            counts[v.kind.value] = counts.get(v.kind.value, 0) + 1
        return counts


class LoweringError(ValueError):
    pass


class Builder:
    def __init__(self, input_metas: Sequence[TensorMeta]):
        self.input_metas = tuple(input_metas)
        self.inputs: list[np.ndarray] = []
        off = 0
        for m in self.input_metas:
            self.inputs.append(np.arange(off, off + m.numel, dtype=np.int64).reshape(m.shape))
            off += m.numel
        self.n_inputs = off
        self.dtypes: list[DType] = []
        for m in self.input_metas:
            self.dtypes.extend([m.dtype] * m.numel)
        self.vertices: list[Vertex] = []

    def dtype_of(self, op: Operand) -> DType:
        return op.dtype if isinstance(op, Const) else self.dtypes[op]

    def emit(self, kind: BopKind, *operands: Operand) -> int:
        ops = tuple(o if isinstance(o, Const) else int(o) for o in operands)
        dt = result_dtype(kind, [self.dtype_of(o) for o in ops])
        self.vertices.append(Vertex(kind, ops, dt))
        self.dtypes.append(dt)
        return len(self.dtypes) - 1

    def finish(self, out_vars: np.ndarray, out_meta: TensorMeta) -> Circuit:
        outs: list[int] = []
        used: set[int] = set()
        for v in out_vars.reshape(-1).tolist():
            # every output element must be a distinct vertex result
            if v < self.n_inputs or v in used:
                v = self.emit(B.ASSIGN, v)
            used.add(v)
            outs.append(v)
        return Circuit(self.input_metas, out_meta, self.vertices, tuple(outs))


def f32_const(bits: int) -> Const:
    return Const(ScalarValue.f32(bits))


def f32_const_value(x: float) -> Const:
    return f32_const(f32_attribute(x))


POS_ZERO = f32_const(0x00000000)
F32_255 = f32_const(0x437F0000)

_ARITH = {
    ("Add", DType.F32): B.F32_ADD, ("Add", DType.I32): B.I32_ADD,
    ("Sub", DType.F32): B.F32_SUB, ("Sub", DType.I32): B.I32_SUB,
    ("Mul", DType.F32): B.F32_MUL, ("Mul", DType.I32): B.I32_MUL,
    ("Div", DType.F32): B.F32_DIV, ("Min", DType.F32): B.F32_MIN, ("Max", DType.F32): B.F32_MAX,
}

CAST_BOPS = {
    (DType.F32, DType.I32): B.F32_TO_I32, (DType.F32, DType.U8): B.F32_TO_U8,
    (DType.U8, DType.F32): B.U8_TO_F32, (DType.U8, DType.I32): B.U8_TO_I32,
    (DType.I32, DType.F32): B.I32_TO_F32,
}


def _chain(b: Builder, kind: BopKind, terms: Sequence[Operand]) -> Operand:
    """Left-associative ((t0 op t1) op t2) ...; a single term is returned as is."""
    acc = terms[0]
    for t in terms[1:]:
        acc = b.emit(kind, acc, t)
    return acc


def _elementwise(kind_name: str):
    def lower(b: Builder, metas: list[TensorMeta], attrs: dict[str, Any]) -> np.ndarray:
        a, other = b.inputs
        kind = _ARITH[(kind_name, metas[0].dtype)]
        rhs = np.broadcast_to(other, a.shape)
        out = [b.emit(kind, x, y) for x, y in zip(a.reshape(-1).tolist(), rhs.reshape(-1).tolist())]
        return np.array(out, dtype=np.int64).reshape(a.shape)
    return lower


def _relu(b: Builder, metas, attrs) -> np.ndarray:
    (x,) = b.inputs
    return np.array([b.emit(B.F32_MAX, v, POS_ZERO) for v in x.reshape(-1).tolist()],
                    dtype=np.int64).reshape(x.shape)


def _clip(b: Builder, metas, attrs) -> np.ndarray:
    (x,) = b.inputs
    lo, hi = attrs.get("min"), attrs.get("max")
    out = []
    for v in x.reshape(-1).tolist():
        y: Operand = v
        if lo is not None:
            y = b.emit(B.F32_MAX, y, f32_const_value(lo))
        if hi is not None:
            y = b.emit(B.F32_MIN, y, f32_const_value(hi))
        if lo is None and hi is None:
            y = b.emit(B.ASSIGN, y)
        out.append(y)
    return np.array(out, dtype=np.int64).reshape(x.shape)


def pool_windows(shape: tuple[int, ...], attrs: Mapping[str, Any]) -> tuple[tuple[int, ...], list[list[tuple]]]:
    """Output shape and, per output element, its window indices in row-major order."""
    n, c, h, w = shape
    kh, kw = attrs["kernel_shape"]
    sh, sw = attrs["strides"]
    oh, ow = (h - kh) // sh + 1, (w - kw) // sw + 1
    windows = []
    for ni in range(n):
        for ci in range(c):
            for i in range(oh):
                for j in range(ow):
                    windows.append([(ni, ci, i * sh + di, j * sw + dj)
                                    for di in range(kh) for dj in range(kw)])
    return (n, c, oh, ow), windows


def _pool(average: bool):
    def lower(b: Builder, metas, attrs) -> np.ndarray:
        (x,) = b.inputs
        out_shape, windows = pool_windows(x.shape, attrs)
        count = f32_const_value(float(len(windows[0])))
        out = []
        for win in windows:
            terms = [int(x[idx]) for idx in win]
            if average:
                acc = _chain(b, B.F32_ADD, terms)
                out.append(b.emit(B.F32_DIV, acc, count))
            else:
                acc = _chain(b, B.F32_MAX, terms)
                out.append(acc if len(terms) > 1 else b.emit(B.ASSIGN, acc))
        return np.array(out, dtype=np.int64).reshape(out_shape)
    return lower


def reduction_groups(shape: tuple[int, ...], attrs: Mapping[str, Any]) -> tuple[np.ndarray, tuple[int, ...]]:
    """Flat element indices arranged as (outputs, reduced terms), and the output shape."""
    axes = reduce_axes(len(shape), attrs)
    kept = [i for i in range(len(shape)) if i not in axes]
    idx = np.arange(int(np.prod(shape)), dtype=np.int64).reshape(shape)
    moved = np.transpose(idx, kept + list(axes))
    n_out = int(np.prod([shape[i] for i in kept])) if kept else 1
    groups = moved.reshape(n_out, -1)
    if attrs["keepdims"]:
        out_shape = tuple(1 if i in axes else d for i, d in enumerate(shape))
    else:
        out_shape = tuple(shape[i] for i in kept)
    return groups, out_shape


def _reduce(maximum: bool):
    def lower(b: Builder, metas, attrs) -> np.ndarray:
        (x,) = b.inputs
        groups, out_shape = reduction_groups(x.shape, attrs)
        flat = x.reshape(-1)
        if maximum:
            kind = B.F32_MAX
        else:
            kind = B.F32_ADD if metas[0].dtype is DType.F32 else B.I32_ADD
        out = []
        for row in groups:
            terms = [int(flat[i]) for i in row]
            acc = _chain(b, kind, terms)
            out.append(acc if len(terms) > 1 else b.emit(B.ASSIGN, acc))
        return np.array(out, dtype=np.int64).reshape(out_shape)
    return lower


def _dot_products(b: Builder, a: np.ndarray, w: np.ndarray, mul: BopKind, add: BopKind) -> np.ndarray:
    """Rows of ``a`` (.., M, K) against columns of ``w`` (K, N): all products, then left chains."""
    lead = a.shape[:-1]
    a2 = a.reshape(-1, a.shape[-1])
    k, n = w.shape
    products = [[[b.emit(mul, int(a2[r, i]), int(w[i, j])) for i in range(k)] for j in range(n)]
                for r in range(a2.shape[0])]
    out = [[_chain(b, add, products[r][j]) for j in range(n)] for r in range(a2.shape[0])]
    return np.array(out, dtype=np.int64).reshape(lead + (n,))


def _matmul(b: Builder, metas, attrs) -> np.ndarray:
    a, w = b.inputs
    return _dot_products(b, a, w, B.F32_MUL, B.F32_ADD)


def _gemm(b: Builder, metas, attrs) -> np.ndarray:
    a, w = b.inputs[:2]
    m, _, n = gemm_dims(metas[0], metas[1], attrs)
    a = a.T if attrs["transA"] else a
    w = w.T if attrs["transB"] else w
    dots = _dot_products(b, a, w, B.F32_MUL, B.F32_ADD)
    alpha = f32_const_value(attrs["alpha"])
    beta = f32_const_value(attrs["beta"])
    c = np.broadcast_to(b.inputs[2], (m, n)) if len(b.inputs) == 3 else None
    out = []
    for i in range(m):
        for j in range(n):
            t = b.emit(B.F32_MUL, int(dots[i, j]), alpha)
            if c is not None:
                cb = b.emit(B.F32_MUL, int(c[i, j]), beta)
                t = b.emit(B.F32_ADD, t, cb)
            out.append(t)
    return np.array(out, dtype=np.int64).reshape(m, n)


def _to_i32(b: Builder, vars_: np.ndarray, dtype: DType, zero_point: np.ndarray | None) -> np.ndarray:
    """Widen u8 variables to i32 and subtract the zero point, element by element."""
    flat = vars_.reshape(-1).tolist()
    if dtype is DType.U8:
        flat = [b.emit(B.U8_TO_I32, v) for v in flat]
    if zero_point is not None:
        zp = int(zero_point.reshape(-1)[0])
        if dtype is DType.U8:
            zp = b.emit(B.U8_TO_I32, zp)
        flat = [b.emit(B.I32_SUB, v, zp) for v in flat]
    return np.array(flat, dtype=np.int64).reshape(vars_.shape)


def _matmul_integer(b: Builder, metas, attrs) -> np.ndarray:
    a = _to_i32(b, b.inputs[0], metas[0].dtype, b.inputs[2] if len(b.inputs) > 2 else None)
    w = _to_i32(b, b.inputs[1], metas[1].dtype, b.inputs[3] if len(b.inputs) > 3 else None)
    return _dot_products(b, a, w, B.I32_MUL, B.I32_ADD)


def conv_terms(metas: Sequence[TensorMeta], attrs: Mapping[str, Any]):
    """Output shape and, per output element, the (x index, w index) pairs in canonical order."""
    n, c, h, w, m, kh, kw, sh, sw, pt, pl, oh, ow = conv_geometry(metas[0], metas[1], attrs)
    terms = []
    for ni in range(n):
        for mi in range(m):
            for i in range(oh):
                for j in range(ow):
                    row = []
                    for ci in range(c):
                        for di in range(kh):
                            y = i * sh - pt + di
                            if not 0 <= y < h:
                                continue
                            for dj in range(kw):
                                x = j * sw - pl + dj
                                if 0 <= x < w:
                                    row.append(((ni, ci, y, x), (mi, ci, di, dj)))
                    terms.append(row)
    return (n, m, oh, ow), terms


def _conv_integer(b: Builder, metas, attrs) -> np.ndarray:
    x = _to_i32(b, b.inputs[0], metas[0].dtype, b.inputs[2] if len(b.inputs) > 2 else None)
    w = _to_i32(b, b.inputs[1], metas[1].dtype, b.inputs[3] if len(b.inputs) > 3 else None)
    out_shape, terms = conv_terms(metas, attrs)
    products = [[b.emit(B.I32_MUL, int(x[xi]), int(w[wi])) for xi, wi in row] for row in terms]
    out = []
    for row in products:
        if not row:
            out.append(b.emit(B.ASSIGN, Const(ScalarValue.i32(0))))
        else:
            out.append(_chain(b, B.I32_ADD, row))
    return np.array(out, dtype=np.int64).reshape(out_shape)


def _batchnorm(b: Builder, metas, attrs) -> np.ndarray:
    x, gamma, beta, mean, var = b.inputs
    eps = f32_const_value(attrs["epsilon"])
    denom = [b.emit(B.F32_SQRT, b.emit(B.F32_ADD, int(v), eps)) for v in var.tolist()]
    channels = x.shape[1]
    out = np.empty(x.shape, dtype=np.int64)
    for idx in np.ndindex(*x.shape):
        ch = idx[1]
        t = b.emit(B.F32_SUB, int(x[idx]), int(mean[ch]))
        t = b.emit(B.F32_DIV, t, denom[ch])
        t = b.emit(B.F32_MUL, t, int(gamma[ch]))
        out[idx] = b.emit(B.F32_ADD, t, int(beta[ch]))
    assert channels == len(denom)
    return out


def _cast(b: Builder, metas, attrs) -> np.ndarray:
    (x,) = b.inputs
    src, dst = metas[0].dtype, DType.parse(attrs["to"])
    kind = B.ASSIGN if src is dst else CAST_BOPS[(src, dst)]
    return np.array([b.emit(kind, v) for v in x.reshape(-1).tolist()], dtype=np.int64).reshape(x.shape)


def _quantize(b: Builder, metas, attrs) -> np.ndarray:
    x, scale = b.inputs[:2]
    s = int(scale.reshape(-1)[0])
    zp: Operand = POS_ZERO
    if len(b.inputs) > 2:
        zp = b.emit(B.U8_TO_F32, int(b.inputs[2].reshape(-1)[0]))
    out = []
    for v in x.reshape(-1).tolist():
        t = b.emit(B.F32_DIV, v, s)
        t = b.emit(B.F32_ROUND, t)
        t = b.emit(B.F32_ADD, t, zp)
        t = b.emit(B.F32_MAX, t, POS_ZERO)
        t = b.emit(B.F32_MIN, t, F32_255)
        out.append(b.emit(B.F32_TO_U8, t))
    return np.array(out, dtype=np.int64).reshape(x.shape)


def _dequantize(b: Builder, metas, attrs) -> np.ndarray:
    x, scale = b.inputs[:2]
    cast = CAST_BOPS[(metas[0].dtype, DType.F32)]
    s = int(scale.reshape(-1)[0])
    zp: Operand = POS_ZERO
    if len(b.inputs) > 2:
        zp = b.emit(cast, int(b.inputs[2].reshape(-1)[0]))
    out = []
    for v in x.reshape(-1).tolist():
        t = b.emit(cast, v)
        t = b.emit(B.F32_SUB, t, zp)
        out.append(b.emit(B.F32_MUL, t, s))
    return np.array(out, dtype=np.int64).reshape(x.shape)


LOWERINGS: dict[str, Callable[[Builder, list[TensorMeta], dict[str, Any]], np.ndarray]] = {
    "Add": _elementwise("Add"), "Sub": _elementwise("Sub"), "Mul": _elementwise("Mul"),
    "Div": _elementwise("Div"), "Min": _elementwise("Min"), "Max": _elementwise("Max"),
    "Relu": _relu, "Clip": _clip,
    "MaxPool": _pool(average=False), "AveragePool": _pool(average=True),
    "ReduceSum": _reduce(maximum=False), "ReduceMax": _reduce(maximum=True),
    "MatMul": _matmul, "Gemm": _gemm, "MatMulInteger": _matmul_integer,
    "ConvInteger": _conv_integer, "BatchNormalization": _batchnorm, "Cast": _cast,
    "QuantizeLinear": _quantize, "DequantizeLinear": _dequantize,
}


def lower_op(node: OpNode, input_meta: Sequence[TensorMeta]) -> Circuit:
    """Lower one operation to its basic-operation circuit."""
    from .graph import ShapeError, infer_node

    if node.kind not in LOWERINGS:
        raise LoweringError(f"unsupported op kind {node.kind!r}")
    metas = list(input_meta)
    try:
        out_meta = infer_node(node, metas)
    except ShapeError as exc:
        raise LoweringError(f"{node.id}: {exc}") from None
    b = Builder(metas)
    out_vars = LOWERINGS[node.kind](b, metas, normalized_attributes(node))
    return b.finish(out_vars, out_meta)


_FLOAT_ATTRS = {"alpha", "beta", "epsilon", "min", "max"}


def dedup_key(node: OpNode, input_meta: Sequence[TensorMeta]) -> str:
    """Canonical text of kind, attributes and input dtypes/shapes."""
    attrs = {}
    for k, v in normalized_attributes(node).items():
        if k in _FLOAT_ATTRS and v is not None:
            v = f"f32:{f32_attribute(v):08x}"
        attrs[k] = v
    metas = [[m.dtype.value, list(m.shape)] for m in input_meta]
    return json.dumps([node.kind, attrs, metas], sort_keys=True, separators=(",", ":"))


class DedupCache:
    """Lowered circuits keyed by ``dedup_key``; the first writer wins."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._circuits: dict[str, Circuit] = {}
        self.hits = 0
        self.misses = 0

    def get(self, node: OpNode, input_meta: Sequence[TensorMeta]) -> Circuit:
        key = dedup_key(node, input_meta)
        with self._lock:
            found = self._circuits.get(key)
            if found is not None:
                self.hits += 1
                return found
        circuit = lower_op(node, input_meta)
        with self._lock:
            kept = self._circuits.setdefault(key, circuit)
            if kept is circuit:
                self.misses += 1
            else:
                self.hits += 1
            return kept

    def __len__(self) -> int:
        return len(self._circuits)


def node_input_meta(g: Graph, node: OpNode) -> list[TensorMeta]:
    return [g.edges[e] for e in node.inputs]


# ---------------------------------------------------------------------------
# serialization

@dataclass(frozen=True)
class SymbolicVI:
    position: int
    tag: str  # "in", "bop" or "out"
    kind: BopKind | None = None
    operands: tuple[Operand, ...] = ()
    result: int | None = None
    n_inputs: int = 0
    outputs: tuple[int, ...] = ()


def serialize_circuit(c: Circuit) -> list[SymbolicVI]:
    items = [SymbolicVI(0, "in", n_inputs=c.n_inputs)]
    for t, v in enumerate(c.vertices):
        items.append(SymbolicVI(t + 1, "bop", v.kind, v.operands, c.n_inputs + t))
    items.append(SymbolicVI(len(c.vertices) + 1, "out", outputs=c.outputs))
    return items


def _operand_text(op: Operand) -> str:
    if isinstance(op, Const):
        return f"#{op.dtype.value}:0x{op.value.word:08x}"
    return f"v{op}"


def dump_circuit(c: Circuit) -> str:
    """One line per VI: ``idx kind operands -> result``, after an arity header."""
    lines = [f"circuit inputs={c.n_inputs} outputs={c.n_outputs} vertices={c.n_vertices}"]
    for vi in serialize_circuit(c):
        if vi.tag == "in":
            lines.append(f"{vi.position} in {vi.n_inputs} -> v0..v{vi.n_inputs - 1}")
        elif vi.tag == "out":
            lines.append(f"{vi.position} out " + " ".join(f"v{o}" for o in vi.outputs))
        else:
            ops = " ".join(_operand_text(o) for o in vi.operands)
            lines.append(f"{vi.position} {vi.kind.value} {ops} -> v{vi.result}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# profiling

def _bucket(n: int) -> str:
    lo = 1
    while lo * 4 <= n:
        lo *= 4
    return f"{lo}-{lo * 4 - 1}"


def profile_graph(g: Graph, cache: DedupCache | None = None) -> dict[str, Any]:
    """Per-op BOP counts and totals before and after deduplication."""
    cache = DedupCache() if cache is None else cache
    per_op = []
    seen: dict[str, int] = {}
    for node in g.ordered_nodes():
        metas = node_input_meta(g, node)
        key = dedup_key(node, metas)
        start = time.perf_counter()
        circuit = cache.get(node, metas)
        elapsed = time.perf_counter() - start
        seen.setdefault(key, circuit.n_vertices)
        per_op.append({
            "id": node.id, "kind": node.kind, "bops": circuit.n_vertices,
            "bop_kinds": circuit.kind_counts(), "gen_seconds": elapsed,
        })
    sizes: dict[str, int] = {}
    for rec in per_op:
        b = _bucket(rec["bops"])
        sizes[b] = sizes.get(b, 0) + 1
    total = sum(r["bops"] for r in per_op)
    unique = sum(seen.values())
    return {
        "model": g.name,
        "ops": len(per_op),
        "bops": total,
        "unique_circuits": len(seen),
        "bops_after_dedup": unique,
        "dedup_saving": total - unique,
        "size_distribution": dict(sorted(sizes.items(), key=lambda kv: int(kv[0].split("-")[0]))),
        "per_op": per_op,
    }
