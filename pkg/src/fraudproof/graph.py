"""Operation-level computation graphs: tensors, model documents, validation.

A model document is JSON::

    {"version": 1,
     "inputs":  [{"name": "x", "dtype": "f32", "shape": [4, 32]}],
     "outputs": [{"name": "y", "dtype": "f32", "shape": [4, 8]}],
     "initializers": [{"name": "w", "dtype": "f32", "shape": [32, 8], "data": "<base64 LE>"}],
     "nodes": [{"id": "n0", "kind": "MatMul", "attributes": {}, "inputs": ["x", "w"], "outputs": ["y"]}]}

Every node has exactly one output edge.
"""

from __future__ import annotations

import base64
import heapq
import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .dtypes import DType
from .numerics import reference

NUMPY_DTYPES = {DType.F32: np.dtype("<f4"), DType.I32: np.dtype("<i4"), DType.U8: np.dtype("u1")}
_WORD_VIEW = {DType.F32: np.dtype("<u4"), DType.I32: np.dtype("<i4"), DType.U8: np.dtype("u1")}


class GraphError(ValueError):
    """Raised by ``load_model`` with the full diagnostic list."""

    def __init__(self, diagnostics: Sequence[str]):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


class ModelParseError(ValueError):
    pass


class CycleError(ValueError):
    pass


@dataclass(frozen=True)
class TensorMeta:
    dtype: DType
    shape: tuple[int, ...]

    @property
    def numel(self) -> int:
        return math.prod(self.shape)


@dataclass(frozen=True, eq=False)
class Tensor:
    """Row-major tensor backed by a numpy array; f32 NaN payloads are kept as stored."""

    dtype: DType
    shape: tuple[int, ...]
    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.data, dtype=NUMPY_DTYPES[self.dtype]).reshape(self.shape)
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        object.__setattr__(self, "data", arr)

    @property
    def meta(self) -> TensorMeta:
        return TensorMeta(self.dtype, self.shape)

    @property
    def numel(self) -> int:
        return math.prod(self.shape)

    def payloads(self) -> list[int]:
        """Scalar payloads in row-major order: f32 bits, signed i32, u8."""
        return self.data.reshape(-1).view(_WORD_VIEW[self.dtype]).tolist()

    def words(self) -> list[int]:
        flat = self.data.reshape(-1)
        if self.dtype is DType.I32:
            return flat.view(np.uint32).tolist()
        return flat.view(_WORD_VIEW[self.dtype]).tolist()

    @classmethod
    def from_payloads(cls, dtype: DType, shape: Sequence[int], payloads: Sequence[int]) -> "Tensor":
        raw = np.array(payloads, dtype=_WORD_VIEW[dtype])
        return cls(dtype, tuple(shape), raw.view(NUMPY_DTYPES[dtype]))

    @classmethod
    def from_values(cls, dtype: DType, shape: Sequence[int], values: Iterable[Any]) -> "Tensor":
        return cls(dtype, tuple(shape), np.asarray(list(values), dtype=NUMPY_DTYPES[dtype]))

    def to_bytes(self) -> bytes:
        return self.data.tobytes()

    @classmethod
    def from_bytes(cls, dtype: DType, shape: Sequence[int], raw: bytes) -> "Tensor":
        return cls(dtype, tuple(shape), np.frombuffer(raw, dtype=NUMPY_DTYPES[dtype]).copy())

    def bit_equal(self, other: "Tensor") -> bool:
        return (
            self.dtype is other.dtype
            and self.shape == other.shape
            and self.data.tobytes() == other.data.tobytes()
        )

    def __repr__(self) -> str:
        return f"Tensor({self.dtype.value}, {list(self.shape)})"


@dataclass
class OpNode:
    id: str
    kind: str
    inputs: list[str]
    outputs: list[str]
    attributes: dict[str, Any] = field(default_factory=dict)

    @property
    def output(self) -> str:
        return self.outputs[0]


@dataclass
class Graph:
    inputs: list[tuple[str, TensorMeta]]
    outputs: list[tuple[str, TensorMeta]]
    nodes: list[OpNode]
    initializers: dict[str, Tensor] = field(default_factory=dict)
    name: str = "model"
    _edges: dict[str, TensorMeta] | None = field(default=None, repr=False, compare=False)
    _order: list[str] | None = field(default=None, repr=False, compare=False)

    @property
    def input_names(self) -> list[str]:
        return [n for n, _ in self.inputs]

    @property
    def output_names(self) -> list[str]:
        return [n for n, _ in self.outputs]

    def node(self, node_id: str) -> OpNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(f"no node {node_id!r}")

    @property
    def edges(self) -> dict[str, TensorMeta]:
        """Edge name -> inferred metadata (the graph must be valid)."""
        if self._edges is None:
            edges, diags = _infer_all(self)
            if diags:
                raise GraphError(diags)
            self._edges = edges
        return self._edges

    def ordered_nodes(self) -> list[OpNode]:
        if self._order is None:
            self._order = topo_order_ops(self)
        by_id = {n.id: n for n in self.nodes}
        return [by_id[i] for i in self._order]

    def source_names(self) -> list[str]:
        """Graph inputs followed by initializers: the committed source tensors."""
        return self.input_names + list(self.initializers)


# ---------------------------------------------------------------------------
# operation signatures and shape inference

class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class OpSignature:
    min_inputs: int
    max_inputs: int
    defaults: Mapping[str, Any]
    infer: Callable[[list[TensorMeta], dict[str, Any]], TensorMeta]
    required: frozenset[str] = frozenset()


def _need(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeError(msg)


def _dtypes_in(meta: TensorMeta, allowed: Iterable[DType], what: str) -> None:
    allowed = tuple(allowed)
    _need(meta.dtype in allowed, f"{what} dtype {meta.dtype.value} not in {[d.value for d in allowed]}")


def unidirectional_broadcast(a: tuple[int, ...], b: tuple[int, ...]) -> bool:
    """True when ``b`` broadcasts to ``a`` without changing ``a``."""
    if len(b) > len(a):
        return False
    for da, db in zip(a[::-1], b[::-1]):
        if db != da and db != 1:
            return False
    return True


def _elementwise(allowed: tuple[DType, ...]):
    def infer(ins: list[TensorMeta], attrs: dict[str, Any]) -> TensorMeta:
        a, b = ins
        _dtypes_in(a, allowed, "operand")
        _need(a.dtype is b.dtype, f"operand dtypes differ: {a.dtype.value} vs {b.dtype.value}")
        _need(unidirectional_broadcast(a.shape, b.shape),
              f"shape {list(b.shape)} does not broadcast to {list(a.shape)}")
        return a
    return infer


def _unary_f32(ins: list[TensorMeta], attrs: dict[str, Any]) -> TensorMeta:
    _dtypes_in(ins[0], (DType.F32,), "input")
    return ins[0]


def _clip(ins: list[TensorMeta], attrs: dict[str, Any]) -> TensorMeta:
    for key in ("min", "max"):
        if attrs.get(key) is not None:
            _need(isinstance(attrs[key], (int, float)), f"Clip {key} must be a number")
    return _unary_f32(ins, attrs)


def _pool(ins: list[TensorMeta], attrs: dict[str, Any]) -> TensorMeta:
    (x,) = ins
    _dtypes_in(x, (DType.F32,), "input")
    _need(len(x.shape) == 4, "pooling expects NCHW input")
    kh, kw = _pair(attrs.get("kernel_shape"), "kernel_shape")
    sh, sw = _pair(attrs["strides"], "strides")
    _need(all(p == 0 for p in attrs["pads"]), "pooling supports zero pads only")
    n, c, h, w = x.shape
    _need(kh <= h and kw <= w, "pooling window larger than input")
    return TensorMeta(DType.F32, (n, c, (h - kh) // sh + 1, (w - kw) // sw + 1))


def _pair(value: Any, name: str) -> tuple[int, int]:
    _need(isinstance(value, (list, tuple)) and len(value) == 2, f"{name} must have 2 entries")
    _need(all(isinstance(v, int) and v >= 1 for v in value), f"{name} entries must be positive ints")
    return int(value[0]), int(value[1])


def reduce_axes(rank: int, attrs: Mapping[str, Any]) -> tuple[int, ...]:
    axes = attrs.get("axes")
    if axes is None:
        return tuple(range(rank))
    out = []
    for a in axes:
        _need(isinstance(a, int) and -rank <= a < rank, f"axis {a} out of range for rank {rank}")
        out.append(a % rank)
    _need(len(set(out)) == len(out), "repeated reduction axis")
    return tuple(sorted(out))


def _reduce(allowed: tuple[DType, ...]):
    def infer(ins: list[TensorMeta], attrs: dict[str, Any]) -> TensorMeta:
        (x,) = ins
        _dtypes_in(x, allowed, "input")
        axes = reduce_axes(len(x.shape), attrs)
        keep = bool(attrs["keepdims"])
        shape = tuple(
            (1 if keep else None) if i in axes else d for i, d in enumerate(x.shape)
        )
        return TensorMeta(x.dtype, tuple(d for d in shape if d is not None))
    return infer


def _matmul(ins: list[TensorMeta], attrs: dict[str, Any]) -> TensorMeta:
    a, b = ins
    _dtypes_in(a, (DType.F32,), "A")
    _dtypes_in(b, (DType.F32,), "B")
    _need(len(a.shape) >= 2 and len(b.shape) == 2, "MatMul expects A of rank >= 2 and a 2-D B")
    _need(a.shape[-1] == b.shape[0], f"inner dimensions differ: {a.shape[-1]} vs {b.shape[0]}")
    return TensorMeta(DType.F32, a.shape[:-1] + (b.shape[1],))


def gemm_dims(a: TensorMeta, b: TensorMeta, attrs: Mapping[str, Any]) -> tuple[int, int, int]:
    _need(len(a.shape) == 2 and len(b.shape) == 2, "Gemm expects 2-D A and B")
    m, k = a.shape[::-1] if attrs["transA"] else a.shape
    k2, n = b.shape[::-1] if attrs["transB"] else b.shape
    _need(k == k2, f"inner dimensions differ: {k} vs {k2}")
    return m, k, n


def _gemm(ins: list[TensorMeta], attrs: dict[str, Any]) -> TensorMeta:
    for t, name in zip(ins, "ABC"):
        _dtypes_in(t, (DType.F32,), name)
    m, _, n = gemm_dims(ins[0], ins[1], attrs)
    if len(ins) == 3:
        _need(unidirectional_broadcast((m, n), ins[2].shape),
              f"C shape {list(ins[2].shape)} does not broadcast to {[m, n]}")
    return TensorMeta(DType.F32, (m, n))


def _scalar_like(t: TensorMeta, dtype: DType, what: str) -> None:
    _need(t.numel == 1, f"{what} must hold a single element")
    _need(t.dtype is dtype, f"{what} dtype must be {dtype.value}")


def _matmul_integer(ins: list[TensorMeta], attrs: dict[str, Any]) -> TensorMeta:
    a, b = ins[:2]
    _dtypes_in(a, (DType.U8, DType.I32), "A")
    _dtypes_in(b, (DType.U8, DType.I32), "B")
    _need(len(a.shape) == 2 and len(b.shape) == 2, "MatMulInteger expects 2-D operands")
    _need(a.shape[1] == b.shape[0], f"inner dimensions differ: {a.shape[1]} vs {b.shape[0]}")
    if len(ins) > 2:
        _scalar_like(ins[2], a.dtype, "a_zero_point")
    if len(ins) > 3:
        _scalar_like(ins[3], b.dtype, "b_zero_point")
    return TensorMeta(DType.I32, (a.shape[0], b.shape[1]))


def conv_geometry(x: TensorMeta, w: TensorMeta, attrs: Mapping[str, Any]) -> tuple[int, ...]:
    """(n, c, h, w, m, kh, kw, sh, sw, pt, pl, oh, ow)."""
    _need(len(x.shape) == 4 and len(w.shape) == 4, "ConvInteger expects NCHW input and MCkk weights")
    n, c, h, wd = x.shape
    m, c2, kh, kw = w.shape
    _need(c == c2, f"channel mismatch: {c} vs {c2}")
    _need(attrs["group"] == 1, "only group=1 is supported")
    if attrs.get("kernel_shape") is not None:
        _need(tuple(attrs["kernel_shape"]) == (kh, kw), "kernel_shape disagrees with weights")
    sh, sw = _pair(attrs["strides"], "strides")
    pads = attrs["pads"]
    _need(len(pads) == 4 and all(isinstance(p, int) and p >= 0 for p in pads), "pads must be 4 non-negative ints")
    pt, pl, pb, pr = pads
    oh = (h + pt + pb - kh) // sh + 1
    ow = (wd + pl + pr - kw) // sw + 1
    _need(oh >= 1 and ow >= 1, "convolution output would be empty")
    return n, c, h, wd, m, kh, kw, sh, sw, pt, pl, oh, ow


def _conv_integer(ins: list[TensorMeta], attrs: dict[str, Any]) -> TensorMeta:
    x, w = ins[:2]
    _dtypes_in(x, (DType.U8, DType.I32), "x")
    _dtypes_in(w, (DType.U8, DType.I32), "w")
    if len(ins) > 2:
        _scalar_like(ins[2], x.dtype, "x_zero_point")
    if len(ins) > 3:
        _scalar_like(ins[3], w.dtype, "w_zero_point")
    g = conv_geometry(x, w, attrs)
    return TensorMeta(DType.I32, (g[0], g[4], g[11], g[12]))


def _batchnorm(ins: list[TensorMeta], attrs: dict[str, Any]) -> TensorMeta:
    x = ins[0]
    _dtypes_in(x, (DType.F32,), "X")
    _need(len(x.shape) >= 2, "BatchNormalization expects rank >= 2")
    for t, name in zip(ins[1:], ("scale", "B", "mean", "var")):
        _dtypes_in(t, (DType.F32,), name)
        _need(t.shape == (x.shape[1],), f"{name} must have shape [{x.shape[1]}]")
    return x


CAST_KINDS = {
    (DType.F32, DType.I32), (DType.F32, DType.U8), (DType.U8, DType.F32),
    (DType.U8, DType.I32), (DType.I32, DType.F32),
}


def _cast(ins: list[TensorMeta], attrs: dict[str, Any]) -> TensorMeta:
    (x,) = ins
    to = attrs.get("to")
    _need(isinstance(to, str), "Cast requires a 'to' dtype")
    try:
        target = DType.parse(to)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    _need(x.dtype is target or (x.dtype, target) in CAST_KINDS,
          f"cast {x.dtype.value} -> {target.value} is not supported")
    return TensorMeta(target, x.shape)


def _quantize(ins: list[TensorMeta], attrs: dict[str, Any]) -> TensorMeta:
    x, scale = ins[:2]
    _dtypes_in(x, (DType.F32,), "x")
    _scalar_like(scale, DType.F32, "y_scale")
    if len(ins) > 2:
        _scalar_like(ins[2], DType.U8, "y_zero_point")
    return TensorMeta(DType.U8, x.shape)


def _dequantize(ins: list[TensorMeta], attrs: dict[str, Any]) -> TensorMeta:
    x, scale = ins[:2]
    _dtypes_in(x, (DType.U8, DType.I32), "x")
    _scalar_like(scale, DType.F32, "x_scale")
    if len(ins) > 2:
        _scalar_like(ins[2], x.dtype, "x_zero_point")
    return TensorMeta(DType.F32, x.shape)


_F32_ONLY = (DType.F32,)
_F32_I32 = (DType.F32, DType.I32)

OP_SIGNATURES: dict[str, OpSignature] = {
    "Add": OpSignature(2, 2, {}, _elementwise(_F32_I32)),
    "Sub": OpSignature(2, 2, {}, _elementwise(_F32_I32)),
    "Mul": OpSignature(2, 2, {}, _elementwise(_F32_I32)),
    "Div": OpSignature(2, 2, {}, _elementwise(_F32_ONLY)),
    "Min": OpSignature(2, 2, {}, _elementwise(_F32_ONLY)),
    "Max": OpSignature(2, 2, {}, _elementwise(_F32_ONLY)),
    "Relu": OpSignature(1, 1, {}, _unary_f32),
    "Clip": OpSignature(1, 1, {"min": None, "max": None}, _clip),
    "MaxPool": OpSignature(1, 1, {"kernel_shape": None, "strides": [1, 1], "pads": [0, 0, 0, 0]},
                           _pool, frozenset({"kernel_shape"})),
    "AveragePool": OpSignature(1, 1, {"kernel_shape": None, "strides": [1, 1], "pads": [0, 0, 0, 0]},
                               _pool, frozenset({"kernel_shape"})),
    "ReduceSum": OpSignature(1, 1, {"axes": None, "keepdims": 1}, _reduce(_F32_I32)),
    "ReduceMax": OpSignature(1, 1, {"axes": None, "keepdims": 1}, _reduce(_F32_ONLY)),
    "MatMul": OpSignature(2, 2, {}, _matmul),
    "Gemm": OpSignature(2, 3, {"alpha": 1.0, "beta": 1.0, "transA": 0, "transB": 0}, _gemm),
    "MatMulInteger": OpSignature(2, 4, {}, _matmul_integer),
    "ConvInteger": OpSignature(
        2, 4, {"kernel_shape": None, "strides": [1, 1], "pads": [0, 0, 0, 0], "group": 1}, _conv_integer),
    "BatchNormalization": OpSignature(5, 5, {"epsilon": 1e-5}, _batchnorm),
    "Cast": OpSignature(1, 1, {"to": None}, _cast, frozenset({"to"})),
    "QuantizeLinear": OpSignature(2, 3, {}, _quantize),
    "DequantizeLinear": OpSignature(2, 3, {}, _dequantize),
}

SUPPORTED_KINDS = tuple(OP_SIGNATURES)


def normalized_attributes(node: OpNode) -> dict[str, Any]:
    """Node attributes with defaults filled in, in sorted key order."""
    sig = OP_SIGNATURES[node.kind]
    merged = dict(sig.defaults)
    merged.update(node.attributes)
    return {k: merged[k] for k in sorted(merged)}


def f32_attribute(value: float) -> int:
    """Bit pattern of a float attribute rounded to binary32."""
    return reference.from_float(float(value))


def infer_node(node: OpNode, input_meta: list[TensorMeta]) -> TensorMeta:
    sig = OP_SIGNATURES[node.kind]
    return sig.infer(input_meta, normalized_attributes(node))


# ---------------------------------------------------------------------------
# validation

def _check_nodes(g: Graph, diags: list[str]) -> None:
    seen_ids: set[str] = set()
    for node in g.nodes:
        if node.id in seen_ids:
            diags.append(f"duplicate node id {node.id!r}")
        seen_ids.add(node.id)
        sig = OP_SIGNATURES.get(node.kind)
        if sig is None:
            diags.append(f"node {node.id}: unknown op kind {node.kind!r}")
            continue
        if not sig.min_inputs <= len(node.inputs) <= sig.max_inputs:
            diags.append(
                f"node {node.id}: {node.kind} takes {sig.min_inputs}..{sig.max_inputs} inputs, got {len(node.inputs)}")
        if len(node.outputs) != 1:
            diags.append(f"node {node.id}: exactly one output required, got {len(node.outputs)}")
        unknown = set(node.attributes) - set(sig.defaults)
        if unknown:
            diags.append(f"node {node.id}: unknown attributes {sorted(unknown)}")
        missing = sig.required - {k for k, v in node.attributes.items() if v is not None}
        if missing:
            diags.append(f"node {node.id}: missing attributes {sorted(missing)}")


def _producers(g: Graph, diags: list[str]) -> dict[str, str]:
    """Edge -> producer label; records duplicate producers."""
    producers: dict[str, str] = {}

    def claim(edge: str, who: str) -> None:
        if edge in producers:
            diags.append(f"edge {edge!r} has more than one producer ({producers[edge]}, {who})")
        else:
            producers[edge] = who

    for name, _ in g.inputs:
        claim(name, "graph input")
    for name in g.initializers:
        claim(name, "initializer")
    for node in g.nodes:
        for out in node.outputs:
            claim(out, f"node {node.id}")
    return producers


def _order_ids(g: Graph) -> tuple[list[str], bool]:
    """Kahn's algorithm with ascending-id tie break; returns (order, acyclic)."""
    producer = {out: n.id for n in g.nodes for out in n.outputs}
    indeg = {n.id: 0 for n in g.nodes}
    consumers: dict[str, list[str]] = {n.id: [] for n in g.nodes}
    for n in g.nodes:
        for src in {producer[e] for e in n.inputs if e in producer}:
            indeg[n.id] += 1
            consumers[src].append(n.id)
    heap = [i for i, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    order: list[str] = []
    while heap:
        nid = heapq.heappop(heap)
        order.append(nid)
        for c in consumers[nid]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(heap, c)
    return order, len(order) == len(indeg)


def topo_order_ops(g: Graph) -> list[str]:
    """Deterministic topological order of node ids, ties broken by ascending id."""
    order, acyclic = _order_ids(g)
    if not acyclic:
        stuck = sorted(set(n.id for n in g.nodes) - set(order))
        raise CycleError(f"graph has a cycle through {stuck}")
    return order


def _infer_all(g: Graph) -> tuple[dict[str, TensorMeta], list[str]]:
    diags: list[str] = []
    _check_nodes(g, diags)
    producers = _producers(g, diags)
    edges: dict[str, TensorMeta] = {}
    for name, meta in g.inputs:
        edges[name] = meta
    for name, t in g.initializers.items():
        edges[name] = t.meta
    for name, meta in list(edges.items()):
        if any(d <= 0 for d in meta.shape):
            diags.append(f"edge {name!r}: zero or negative extent in shape {list(meta.shape)}")
    for node in g.nodes:
        for e in node.inputs:
            if e not in producers:
                diags.append(f"node {node.id}: input {e!r} is not produced by anything")
    order, acyclic = _order_ids(g)
    if not acyclic:
        stuck = sorted(set(n.id for n in g.nodes) - set(order))
        diags.append(f"graph has a cycle through {stuck}")
    if diags:
        return edges, diags
    by_id = {n.id: n for n in g.nodes}
    for nid in order:
        node = by_id[nid]
        try:
            meta = infer_node(node, [edges[e] for e in node.inputs])
        except ShapeError as exc:
            diags.append(f"node {nid} ({node.kind}): {exc}")
            return edges, diags
        if any(d <= 0 for d in meta.shape):
            diags.append(f"node {nid}: zero extent in output shape {list(meta.shape)}")
            return edges, diags
        edges[node.output] = meta
    node_outputs = {n.output for n in g.nodes}
    seen_out: set[str] = set()
    for name, meta in g.outputs:
        if name in seen_out:
            diags.append(f"graph output {name!r} listed twice")
        seen_out.add(name)
        if name not in node_outputs:
            diags.append(f"graph output {name!r} is not produced by a node")
        elif edges[name] != meta:
            diags.append(
                f"graph output {name!r}: declared {meta.dtype.value}{list(meta.shape)}, "
                f"inferred {edges[name].dtype.value}{list(edges[name].shape)}")
    if not g.outputs:
        diags.append("graph declares no outputs")
    return edges, diags


def validate_graph(g: Graph) -> list[str]:
    """One diagnostic per violated invariant; empty when the graph is valid."""
    _, diags = _infer_all(g)
    return diags


# ---------------------------------------------------------------------------
# documents

def _meta_record(name: str, meta: TensorMeta) -> dict[str, Any]:
    return {"name": name, "dtype": meta.dtype.value, "shape": list(meta.shape)}


def graph_to_document(g: Graph) -> dict[str, Any]:
    return {
        "version": 1,
        "name": g.name,
        "inputs": [_meta_record(n, m) for n, m in g.inputs],
        "outputs": [_meta_record(n, m) for n, m in g.outputs],
        "initializers": [
            {**_meta_record(n, t.meta), "data": base64.b64encode(t.to_bytes()).decode("ascii")}
            for n, t in g.initializers.items()
        ],
        "nodes": [
            {"id": n.id, "kind": n.kind, "attributes": dict(n.attributes),
             "inputs": list(n.inputs), "outputs": list(n.outputs)}
            for n in g.nodes
        ],
    }


def serialize_model(g: Graph) -> bytes:
    return json.dumps(graph_to_document(g), indent=1).encode()


def _parse_meta(rec: Any) -> tuple[str, TensorMeta]:
    if not isinstance(rec, dict):
        raise ModelParseError(f"expected an object, got {type(rec).__name__}")
    try:
        shape = tuple(int(s) for s in rec["shape"])
        return str(rec["name"]), TensorMeta(DType.parse(rec["dtype"]), shape)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelParseError(f"bad tensor record {rec!r}: {exc}") from None


def graph_from_document(doc: Mapping[str, Any]) -> Graph:
    if not isinstance(doc, Mapping):
        raise ModelParseError("model document must be a JSON object")
    if doc.get("version") != 1:
        raise ModelParseError(f"unsupported model version {doc.get('version')!r}")
    try:
        inputs = [_parse_meta(r) for r in doc.get("inputs", [])]
        outputs = [_parse_meta(r) for r in doc.get("outputs", [])]
        inits: dict[str, Tensor] = {}
        for rec in doc.get("initializers", []):
            name, meta = _parse_meta(rec)
            raw = base64.b64decode(rec["data"], validate=True)
            width = NUMPY_DTYPES[meta.dtype].itemsize
            if len(raw) != meta.numel * width:
                raise ModelParseError(
                    f"initializer {name!r}: {len(raw)} bytes for {meta.numel} elements of {meta.dtype.value}")
            inits[name] = Tensor.from_bytes(meta.dtype, meta.shape, raw)
        nodes = [
            OpNode(str(r["id"]), str(r["kind"]), [str(e) for e in r["inputs"]],
                   [str(e) for e in r["outputs"]], dict(r.get("attributes") or {}))
            for r in doc.get("nodes", [])
        ]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelParseError):
            raise
        raise ModelParseError(f"malformed model document: {exc}") from None
    return Graph(inputs, outputs, nodes, inits, name=str(doc.get("name", "model")))


def load_model(document: bytes | str) -> Graph:
    """Parse and validate a model document; raises ``ModelParseError`` or ``GraphError``."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ModelParseError(f"not JSON: {exc}") from None
    g = graph_from_document(doc)
    diags = validate_graph(g)
    if diags:
        raise GraphError(diags)
    return g


def structurally_equal(a: Graph, b: Graph) -> bool:
    if a.inputs != b.inputs or a.outputs != b.outputs:
        return False
    if [(n.id, n.kind, n.inputs, n.outputs, n.attributes) for n in a.nodes] != \
            [(n.id, n.kind, n.inputs, n.outputs, n.attributes) for n in b.nodes]:
        return False
    if list(a.initializers) != list(b.initializers):
        return False
    return all(a.initializers[k].bit_equal(b.initializers[k]) for k in a.initializers)


# input documents: {"x": {"dtype": "f32", "shape": [2], "data": [1.0, 2.0]}}

def inputs_to_document(values: Mapping[str, Tensor]) -> dict[str, Any]:
    out = {}
    for name, t in values.items():
        if t.dtype is DType.F32:
            # bit patterns survive NaN payloads and signed zeros
            data: list[Any] = [f"0x{w:08x}" for w in t.words()]
        else:
            data = t.payloads()
        out[name] = {"dtype": t.dtype.value, "shape": list(t.shape), "data": data}
    return out


def inputs_from_document(doc: Mapping[str, Any]) -> dict[str, Tensor]:
    out = {}
    for name, rec in doc.items():
        dtype = DType.parse(rec["dtype"])
        shape = tuple(int(s) for s in rec["shape"])
        data = rec["data"]
        if math.prod(shape) != len(data):
            raise ModelParseError(f"input {name!r}: {len(data)} values for shape {list(shape)}")
        if dtype is DType.F32 and data and isinstance(data[0], str):
            out[name] = Tensor.from_payloads(dtype, shape, [int(x, 16) for x in data])
        else:
            out[name] = Tensor.from_values(dtype, shape, data)
    return out


def check_inputs(g: Graph, values: Mapping[str, Tensor]) -> None:
    """Raise ``ValueError`` when ``values`` does not match the declared inputs."""
    missing = [n for n in g.input_names if n not in values]
    if missing:
        raise ValueError(f"missing inputs {missing}")
    for name, meta in g.inputs:
        t = values[name]
        if t.meta != meta:
            raise ValueError(
                f"input {name!r}: expected {meta.dtype.value}{list(meta.shape)}, "
                f"got {t.dtype.value}{list(t.shape)}")
