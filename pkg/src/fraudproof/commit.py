"""Trace commitments for both phases.

Every trace tree has the shape ``root = keccak(domain || n:u32be || in || body || out)``
where ``body`` is the k-ary tree over the n fixed-length leaves and ``in`` /
``out`` are the dedicated source and sink records.

Leaf layouts (byte offsets):

* basic-operation leaf, 42 bytes: ``[0] tag, [1] kind code, [2:34] operand
  commitment root, [34:42] result cell``. Symbolic leaves use variable and
  constant cells, concrete leaves use value cells.
* concrete operation leaf, 97 bytes: ``[0] tag, [1:33] symbolic circuit root,
  [33:65] input-digests root, [65:97] output tensor digest``.
* symbolic operation leaf, 73 bytes: ``[0] tag, [1:33] symbolic circuit root,
  [33:65] sources root, [65:69] BOP count, [69:73] output numel``.

Records:

* circuit, symbolic: in = hash of the input count, out = root over the output
  variable cells.
* circuit, concrete: in = root over the input tensor digests, out = the output
  tensor digest.
* graph, symbolic: in = hash of the source tensor metadata, out = root over
  output source cells.
* graph, concrete: in = root over the source tensor digests (graph inputs then
  initializers), out = root over the output tensor digests.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Mapping, Sequence

from .circuit import Circuit, Const, DedupCache, dedup_key, node_input_meta
from .dtypes import DType
from .graph import Graph, OpNode, Tensor, TensorMeta
from .merkle import (
    DIGESTS, OPERANDS, P1C, P1S, P2C, P2S, SOURCES, TENSOR, MerkleTree, build_from_digests,
    build_tree, const_cell, keccak, leaf_digest, source_cell, tensor_cells, value_cell, var_cell,
)
from .numerics.bops import BopKind

TAG_IN, TAG_BOP, TAG_OUT, TAG_OP = 0x01, 0x02, 0x03, 0x04
OUTVARS = 0x35

BOP_LEAF_SIZE = 42
OP_LEAF_SIZE = 97
OP_SYMBOLIC_LEAF_SIZE = 73


def trace_root(domain: int, n: int, in_digest: bytes, body_root: bytes, out_digest: bytes) -> bytes:
    return keccak(bytes((domain,)) + n.to_bytes(4, "big") + in_digest + body_root + out_digest)


@dataclass(frozen=True)
class TraceTree:
    domain: int
    in_digest: bytes
    body: MerkleTree
    out_digest: bytes

    @property
    def n(self) -> int:
        return self.body.n

    @property
    def k(self) -> int:
        return self.body.k

    @property
    def root(self) -> bytes:
        return trace_root(self.domain, self.n, self.in_digest, self.body.root, self.out_digest)

    def triple(self) -> tuple[bytes, bytes, bytes]:
        return self.in_digest, self.body.root, self.out_digest


def word_of(dtype: DType, payload: int) -> int:
    return payload & 0xFFFFFFFF if dtype is DType.I32 else payload


class _Hasher:
    """Operand roots for arity <= 2 with the zero padding precomputed."""

    def __init__(self, k: int):
        self.k = k
        self.pad = {n: bytes(32 * (k - n)) for n in range(0, 3)}

    def operand_root(self, cells: Sequence[bytes]) -> bytes:
        if len(cells) > self.k:
            return build_tree(list(cells), self.k, OPERANDS).root
        digests = b"".join(leaf_digest(OPERANDS, i, c) for i, c in enumerate(cells))
        pad = self.pad.get(len(cells))
        if pad is None:
            pad = bytes(32 * (self.k - len(cells)))
        return keccak(digests + pad)


_HASHERS: dict[int, _Hasher] = {}


def hasher(k: int) -> _Hasher:
    h = _HASHERS.get(k)
    if h is None:
        h = _HASHERS[k] = _Hasher(k)
    return h


def operand_root(cells: Sequence[bytes], k: int) -> bytes:
    return hasher(k).operand_root(cells)


def bop_leaf(kind: BopKind, operand_cells: Sequence[bytes], result_cell: bytes, k: int) -> bytes:
    return bytes((TAG_BOP, kind.code)) + operand_root(operand_cells, k) + result_cell


def decode_bop_leaf(leaf: bytes) -> tuple[int, bytes, bytes]:
    """(kind code, operand root, result cell)."""
    if len(leaf) != BOP_LEAF_SIZE or leaf[0] != TAG_BOP:
        raise ValueError("not a basic-operation leaf")
    return leaf[1], leaf[2:34], leaf[34:42]


def symbolic_operand_cell(op, circuit: Circuit) -> bytes:
    if isinstance(op, Const):
        return const_cell(op.dtype, op.value.word)
    return var_cell(op)


def symbolic_leaves(c: Circuit, k: int) -> list[bytes]:
    n_in = c.n_inputs
    return [
        bop_leaf(v.kind, [symbolic_operand_cell(o, c) for o in v.operands], var_cell(n_in + t), k)
        for t, v in enumerate(c.vertices)
    ]


def output_var_cells(c: Circuit) -> list[bytes]:
    return [var_cell(v) for v in c.outputs]


def p2s_in_digest(c: Circuit) -> bytes:
    return keccak(bytes((P2S, TAG_IN)) + c.n_inputs.to_bytes(4, "big"))


def p2s_tree(c: Circuit, k: int) -> TraceTree:
    body = build_tree(symbolic_leaves(c, k), k, P2S)
    out = build_tree(output_var_cells(c), k, OUTVARS).root
    return TraceTree(P2S, p2s_in_digest(c), body, out)


def operand_value_cells(c: Circuit, values: Sequence[int], t: int) -> list[bytes]:
    cells = []
    for op in c.vertices[t].operands:
        if isinstance(op, Const):
            cells.append(value_cell(op.dtype, op.value.word))
        else:
            cells.append(value_cell(c.var_dtype(op), word_of(c.var_dtype(op), values[op])))
    return cells


def concrete_leaf(c: Circuit, values: Sequence[int], t: int, k: int) -> bytes:
    v = c.vertices[t]
    result = value_cell(v.dtype, word_of(v.dtype, values[c.n_inputs + t]))
    return bop_leaf(v.kind, operand_value_cells(c, values, t), result, k)


def concrete_leaves(c: Circuit, values: Sequence[int], k: int) -> list[bytes]:
    return [concrete_leaf(c, values, t, k) for t in range(c.n_vertices)]


def p2c_tree(c: Circuit, values: Sequence[int], inputs_root: bytes, output_digest: bytes, k: int) -> TraceTree:
    body = build_tree(concrete_leaves(c, values, k), k, P2C)
    return TraceTree(P2C, inputs_root, body, output_digest)


# ---------------------------------------------------------------------------
# tensors

def tensor_tree_of(t: Tensor, k: int) -> MerkleTree:
    return build_tree(tensor_cells(t.dtype, t.words()), k, TENSOR)


def tensor_digest(t: Tensor, k: int) -> bytes:
    return tensor_tree_of(t, k).root


def digests_tree(digests: Sequence[bytes], k: int) -> MerkleTree:
    return build_tree(list(digests), k, DIGESTS)


def op_leaf(p2s_root: bytes, inputs_root: bytes, output_digest: bytes) -> bytes:
    return bytes((TAG_OP,)) + p2s_root + inputs_root + output_digest


def decode_op_leaf(leaf: bytes) -> tuple[bytes, bytes, bytes]:
    if len(leaf) != OP_LEAF_SIZE or leaf[0] != TAG_OP:
        raise ValueError("not an operation leaf")
    return leaf[1:33], leaf[33:65], leaf[65:97]


def op_symbolic_leaf(p2s_root: bytes, sources_root: bytes, n_bops: int, out_numel: int) -> bytes:
    return bytes((TAG_OP,)) + p2s_root + sources_root + n_bops.to_bytes(4, "big") + out_numel.to_bytes(4, "big")


def decode_op_symbolic_leaf(leaf: bytes) -> tuple[bytes, bytes, int, int]:
    if len(leaf) != OP_SYMBOLIC_LEAF_SIZE or leaf[0] != TAG_OP:
        raise ValueError("not a symbolic operation leaf")
    return leaf[1:33], leaf[33:65], int.from_bytes(leaf[65:69], "big"), int.from_bytes(leaf[69:73], "big")


def meta_bytes(meta: TensorMeta) -> bytes:
    out = bytes((meta.dtype.code, len(meta.shape)))
    return out + b"".join(d.to_bytes(4, "big") for d in meta.shape)


# ---------------------------------------------------------------------------

class PreparedModel:
    """A validated graph with its lowered circuits and symbolic trees cached for one k."""

    def __init__(self, g: Graph, k: int = 32, cache: DedupCache | None = None):
        self.graph = g
        self.k = k
        self.cache = cache if cache is not None else DedupCache()
        self.order: list[OpNode] = g.ordered_nodes()
        self.position = {n.id: i + 1 for i, n in enumerate(self.order)}
        self.sources = g.source_names()
        self._source_index = {name: q for q, name in enumerate(self.sources)}
        self._producer = {n.output: self.position[n.id] for n in self.order}
        self._lock = threading.Lock()
        self._p2s: dict[str, TraceTree] = {}
        self._init_digests: dict[str, bytes] = {}
        self._p1s: TraceTree | None = None

    @property
    def n_ops(self) -> int:
        return len(self.order)

    def node_at(self, position: int) -> OpNode:
        return self.order[position - 1]

    def input_meta(self, node: OpNode) -> list[TensorMeta]:
        return node_input_meta(self.graph, node)

    def circuit(self, node: OpNode) -> Circuit:
        return self.cache.get(node, self.input_meta(node))

    def p2s(self, node: OpNode) -> TraceTree:
        key = dedup_key(node, self.input_meta(node))
        with self._lock:
            found = self._p2s.get(key)
        if found is None:
            found = p2s_tree(self.circuit(node), self.k)
            with self._lock:
                found = self._p2s.setdefault(key, found)
        return found

    def edge_source(self, edge: str) -> tuple[int, int]:
        """(producer position, slot): position 0 is the graph's source record."""
        if edge in self._producer:
            return self._producer[edge], 0
        return 0, self._source_index[edge]

    def source_cells(self, node: OpNode) -> list[bytes]:
        cells, off = [], 0
        for edge, meta in zip(node.inputs, self.input_meta(node)):
            p, q = self.edge_source(edge)
            cells.append(source_cell(p, q, off, meta.numel))
            off += meta.numel
        return cells

    def output_source_cells(self) -> list[bytes]:
        cells = []
        for name, meta in self.graph.outputs:
            p, q = self.edge_source(name)
            cells.append(source_cell(p, q, 0, meta.numel))
        return cells

    def p1s_leaf(self, node: OpNode) -> bytes:
        c = self.circuit(node)
        sources = build_tree(self.source_cells(node), self.k, SOURCES).root
        return op_symbolic_leaf(self.p2s(node).root, sources, c.n_vertices, c.output_meta.numel)

    def p1s_tree(self) -> TraceTree:
        if self._p1s is None:
            leaves = [self.p1s_leaf(n) for n in self.order]
            metas = [self.graph.edges[s] for s in self.sources]
            in_digest = keccak(bytes((P1S, TAG_IN)) + len(metas).to_bytes(4, "big")
                               + b"".join(meta_bytes(m) for m in metas))
            out = build_tree(self.output_source_cells(), self.k, SOURCES).root
            self._p1s = TraceTree(P1S, in_digest, build_tree(leaves, self.k, P1S), out)
        return self._p1s

    def source_digest(self, name: str, values: Mapping[str, Tensor]) -> bytes:
        if name in self.graph.initializers:
            with self._lock:
                found = self._init_digests.get(name)
            if found is None:
                found = tensor_digest(self.graph.initializers[name], self.k)
                with self._lock:
                    self._init_digests[name] = found
            return found
        return tensor_digest(values[name], self.k)

    def source_tensor(self, name: str, values: Mapping[str, Tensor]) -> Tensor:
        return self.graph.initializers[name] if name in self.graph.initializers else values[name]


def p1c_tree(in_digest: bytes, leaves: Sequence[bytes], out_digest: bytes, k: int) -> TraceTree:
    return TraceTree(P1C, in_digest, build_tree(list(leaves), k, P1C), out_digest)


def body_from_leaf_digests(digests: list[bytes], k: int, domain: int, leaf_size: int) -> MerkleTree:
    return build_from_digests(digests, k, domain, leaf_size)
