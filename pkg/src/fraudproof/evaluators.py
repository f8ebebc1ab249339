"""Whole-graph, per-operation and per-circuit evaluators.

``eval_graph_native`` runs the kernels with node-level parallelism,
``eval_graph_ops`` steps through operations and records the operation-level
trace, and ``eval_circuit`` steps through one circuit via ``eval_bop``
semantics. Basic-operation traces are only ever produced for one circuit at
a time.
"""

from __future__ import annotations

import heapq
import os
import threading
import weakref
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .circuit import Circuit, Const
from .commit import PreparedModel, digests_tree, tensor_digest, word_of
from .dtypes import DType
from .graph import Graph, Tensor, check_inputs
from .kernels import KernelContext, run_kernel
from .merkle import value_cell
from .numerics.bops import BopKind, ScalarValue, raw_fn


class TraceMeter:
    """Counts live trace records (operation records plus basic-operation records)."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.live = 0
        self.peak = 0
        self.allocated = 0

    def acquire(self, n: int) -> None:
        with self._lock:
            self.live += n
            self.allocated += n
            self.peak = max(self.peak, self.live)

    def release(self, n: int) -> None:
        with self._lock:
            self.live -= n

    def track(self, obj: object, n: int) -> None:
        self.acquire(n)
        weakref.finalize(obj, self.release, n)


# ---------------------------------------------------------------------------
# circuits

class CompiledCircuit:
    """A circuit turned into a flat list of raw-payload steps for one evaluation path."""

    def __init__(self, c: Circuit, path: str = "reference"):
        self.circuit = c
        self.path = path
        consts: list[int] = []
        const_index: dict[tuple[DType, int], int] = {}
        n_in = c.n_inputs

        def ref(op) -> int:
            if isinstance(op, Const):
                key = (op.dtype, op.value.payload)
                if key not in const_index:
                    const_index[key] = len(consts)
                    consts.append(op.value.payload)
                return -1 - const_index[key]
            return op

        steps = []
        for v in c.vertices:
            fn = raw_fn(v.kind, v.dtype, path)
            a = ref(v.operands[0])
            b = ref(v.operands[1]) if len(v.operands) > 1 else None
            steps.append((fn, a, b))
        self.consts = consts
        nc = len(consts)
        # environment layout: constants first, then variables
        self.steps = [(fn, a + nc if a >= 0 else -1 - a, None if b is None else (b + nc if b >= 0 else -1 - b))
                      for fn, a, b in steps]
        self.n_consts = nc
        self.n_inputs = n_in
        self._consumers: list[list[int]] | None = None

    def run(self, inputs: Sequence[int], faults: Mapping[int, int] | None = None) -> list[int]:
        """All variable payloads; ``faults`` maps vertex index -> forced result payload."""
        env = list(self.consts)
        env.extend(inputs)
        if faults:
            for t, (fn, a, b) in enumerate(self.steps):
                if t in faults:
                    env.append(faults[t])
                else:
                    env.append(fn(env[a]) if b is None else fn(env[a], env[b]))
        else:
            append = env.append
            for fn, a, b in self.steps:
                append(fn(env[a]) if b is None else fn(env[a], env[b]))
        return env[self.n_consts:]

    def consumers(self) -> list[list[int]]:
        if self._consumers is None:
            cons: list[list[int]] = [[] for _ in range(self.n_inputs + len(self.steps))]
            for t, v in enumerate(self.circuit.vertices):
                for op in set(o for o in v.operands if not isinstance(o, Const)):
                    cons[op].append(t)
            self._consumers = cons
        return self._consumers

    def propagate(self, values: Sequence[int], vertex: int, payload: int) -> dict[int, int]:
        """Variables whose payload changes when ``vertex`` is forced to ``payload``."""
        n_in = self.n_inputs
        changed = {n_in + vertex: payload}
        if values[n_in + vertex] == payload:
            return {}
        cons = self.consumers()
        heap = list(cons[n_in + vertex])
        heapq.heapify(heap)
        seen = set(heap)
        nc = self.n_consts

        def val(i: int) -> int:
            if i < nc:
                return self.consts[i]
            var = i - nc
            return changed.get(var, values[var])

        while heap:
            t = heapq.heappop(heap)
            fn, a, b = self.steps[t]
            new = fn(val(a)) if b is None else fn(val(a), val(b))
            var = n_in + t
            if new != values[var]:
                changed[var] = new
                for c in cons[var]:
                    if c not in seen:
                        seen.add(c)
                        heapq.heappush(heap, c)
        return changed


_COMPILED: OrderedDict[tuple[int, str], CompiledCircuit] = OrderedDict()
_COMPILED_LOCK = threading.Lock()
COMPILED_CACHE_SIZE = 256


def compiled(c: Circuit, path: str = "reference") -> CompiledCircuit:
    """Compiled form of ``c``, memoized in a small LRU keyed on circuit identity."""
    key = (id(c), path)
    with _COMPILED_LOCK:
        found = _COMPILED.get(key)
        if found is not None and found.circuit is c:
            _COMPILED.move_to_end(key)
            return found
    cc = CompiledCircuit(c, path)
    with _COMPILED_LOCK:
        _COMPILED[key] = cc
        while len(_COMPILED) > COMPILED_CACHE_SIZE:
            _COMPILED.popitem(last=False)
    return cc


@dataclass(frozen=True)
class ConcreteVI:
    position: int
    tag: str
    kind: BopKind | None = None
    operands: tuple[ScalarValue, ...] = ()
    result: ScalarValue | None = None
    values: tuple[ScalarValue, ...] = ()


class BopTrace:
    """Concrete VI sequence of one circuit, stored as the variable payload array."""

    def __init__(self, c: Circuit, values: list[int], meter: TraceMeter | None = None):
        self.circuit = c
        self.values = values
        if meter is not None:
            meter.track(self, c.n_vertices + 2)

    def __len__(self) -> int:
        return self.circuit.n_vertices + 2

    def scalar(self, var: int) -> ScalarValue:
        return ScalarValue(self.circuit.var_dtype(var), self.values[var])

    def operand_value(self, op) -> ScalarValue:
        return op.value if isinstance(op, Const) else self.scalar(op)

    def vi(self, position: int) -> ConcreteVI:
        c = self.circuit
        if position == 0:
            return ConcreteVI(0, "in", values=tuple(self.scalar(i) for i in range(c.n_inputs)))
        if position == c.n_vertices + 1:
            return ConcreteVI(position, "out", values=tuple(self.scalar(v) for v in c.outputs))
        t = position - 1
        v = c.vertices[t]
        return ConcreteVI(position, "bop", v.kind, tuple(self.operand_value(o) for o in v.operands),
                          self.scalar(c.n_inputs + t))

    def __iter__(self):
        return (self.vi(i) for i in range(len(self)))

    def outputs(self) -> list[ScalarValue]:
        return [self.scalar(v) for v in self.circuit.outputs]

    def output_tensor(self) -> Tensor:
        m = self.circuit.output_meta
        return Tensor.from_payloads(m.dtype, m.shape, [self.values[v] for v in self.circuit.outputs])

    def result_cell(self, t: int) -> bytes:
        v = self.circuit.vertices[t]
        return value_cell(v.dtype, word_of(v.dtype, self.values[self.circuit.n_inputs + t]))


def eval_circuit(c: Circuit, inputs: Sequence[ScalarValue] | Sequence[int], path: str = "reference",
                 meter: TraceMeter | None = None, faults: Mapping[int, int] | None = None) -> BopTrace:
    """Step through ``c``; ``inputs`` are ScalarValues (dtype-checked) or raw payloads."""
    if len(inputs) != c.n_inputs:
        raise ValueError(f"circuit takes {c.n_inputs} inputs, got {len(inputs)}")
    payloads = []
    for i, x in enumerate(inputs):
        if isinstance(x, ScalarValue):
            if x.dtype is not c.var_dtype(i):
                raise TypeError(f"input {i}: expected {c.var_dtype(i).value}, got {x.dtype.value}")
            payloads.append(x.payload)
        else:
            payloads.append(int(x))
    return BopTrace(c, compiled(c, path).run(payloads, faults), meter)


def circuit_inputs(tensors: Sequence[Tensor]) -> list[int]:
    out: list[int] = []
    for t in tensors:
        out.extend(t.payloads())
    return out


# ---------------------------------------------------------------------------
# graphs

def _resolve_threads(threads: int | str | None) -> int:
    if threads in (None, "max"):
        return os.cpu_count() or 1
    return max(1, int(threads))


def _levels(g: Graph) -> list[list]:
    producer = {n.output: n for n in g.nodes}
    level: dict[str, int] = {}
    for node in g.ordered_nodes():
        deps = [level[producer[e].id] for e in node.inputs if e in producer]
        level[node.id] = 1 + max(deps, default=-1)
    out: list[list] = []
    for node in g.ordered_nodes():
        lv = level[node.id]
        while len(out) <= lv:
            out.append([])
        out[lv].append(node)
    return out


@dataclass
class NativeResult:
    outputs: dict[str, Tensor]
    output_digests: list[bytes]
    digest: bytes


def _env(g: Graph, inputs: Mapping[str, Tensor]) -> dict[str, Tensor]:
    check_inputs(g, inputs)
    env = dict(g.initializers)
    env.update({name: inputs[name] for name in g.input_names})
    return env


def eval_graph_native(g: Graph | PreparedModel, inputs: Mapping[str, Tensor], threads: int | str | None = 1,
                      k: int = 32) -> NativeResult:
    """Outputs and result digest; independent nodes run concurrently."""
    pm = g if isinstance(g, PreparedModel) else None
    graph = pm.graph if pm else g
    k = pm.k if pm else k
    env = _env(graph, inputs)
    n = _resolve_threads(threads)
    if n <= 1:
        ctx = KernelContext(1)
        for node in graph.ordered_nodes():
            env[node.output] = run_kernel(node, [env[e] for e in node.inputs], ctx)
    else:
        with ThreadPoolExecutor(n) as node_pool, ThreadPoolExecutor(n) as inner:
            ctx = KernelContext(n, inner)
            for level in _levels(graph):
                futures = [(node, node_pool.submit(run_kernel, node, [env[e] for e in node.inputs], ctx))
                           for node in level]
                for node, fut in futures:
                    env[node.output] = fut.result()
    outputs = {name: env[name] for name in graph.output_names}
    digests = [tensor_digest(outputs[name], k) for name in graph.output_names]
    return NativeResult(outputs, digests, digests_tree(digests, k).root)


@dataclass
class OpRecord:
    position: int
    node_id: str
    p2s_root: bytes
    input_digests: tuple[bytes, ...]
    inputs_root: bytes
    output_digest: bytes
    output: Tensor


@dataclass
class OpTrace:
    source_digests: tuple[bytes, ...]
    in_digest: bytes
    records: list[OpRecord]
    output_digests: tuple[bytes, ...]
    out_digest: bytes
    outputs: dict[str, Tensor] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records) + 2

    def record(self, position: int) -> OpRecord:
        return self.records[position - 1]


def eval_graph_ops(model: Graph | PreparedModel, inputs: Mapping[str, Tensor], k: int = 32,
                   meter: TraceMeter | None = None, upto: int | None = None) -> OpTrace:
    """Operation-level trace; ``upto`` stops after that many operations (a prefix)."""
    pm = model if isinstance(model, PreparedModel) else PreparedModel(model, k)
    g = pm.graph
    env = _env(g, inputs)
    digests = {name: pm.source_digest(name, inputs) for name in pm.sources}
    source_digests = tuple(digests[name] for name in pm.sources)
    in_digest = digests_tree(source_digests, pm.k).root
    records = []
    order = pm.order if upto is None else pm.order[:upto]
    for node in order:
        ins = [env[e] for e in node.inputs]
        out = run_kernel(node, ins)
        env[node.output] = out
        in_d = tuple(digests[e] for e in node.inputs)
        digests[node.output] = tensor_digest(out, pm.k)
        records.append(OpRecord(pm.position[node.id], node.id, pm.p2s(node).root, in_d,
                                digests_tree(in_d, pm.k).root, digests[node.output], out))
    if upto is None:
        out_d = tuple(digests[name] for name in g.output_names)
        outputs = {name: env[name] for name in g.output_names}
        out_root = digests_tree(out_d, pm.k).root
    else:
        out_d, outputs, out_root = (), {}, b""
    trace = OpTrace(source_digests, in_digest, records, out_d, out_root, outputs)
    if meter is not None:
        meter.track(trace, len(trace))
    return trace


def op_inputs(pm: PreparedModel, trace: OpTrace, position: int, inputs: Mapping[str, Tensor]) -> list[Tensor]:
    """Input tensors of the operation at ``position`` as recorded in ``trace``."""
    node = pm.node_at(position)
    out = []
    for edge in node.inputs:
        p, _ = pm.edge_source(edge)
        out.append(pm.source_tensor(edge, inputs) if p == 0 else trace.record(p).output)
    return out


def eval_op_circuit(pm: PreparedModel, position: int, tensors: Sequence[Tensor], path: str = "reference",
                    meter: TraceMeter | None = None) -> BopTrace:
    node = pm.node_at(position)
    return eval_circuit(pm.circuit(node), circuit_inputs(tensors), path, meter)
