"""Off-chain parties and the trace views they answer from.

A :class:`TraceView` is one party's account of the computation: an
operation-level trace plus circuit traces built lazily, one operation at a
time. Faulty submitters answer from a view derived from the honest one with a
single injected fault, rebuilt incrementally.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from typing import Mapping

from ..circuit import Circuit
from ..commit import (
    OUTVARS, PreparedModel, TraceTree, bop_leaf, concrete_leaf, digests_tree, op_leaf,
    operand_value_cells, output_var_cells, p1c_tree, p2c_tree, symbolic_operand_cell, tensor_digest,
    tensor_tree_of, word_of,
)
from ..dtypes import DType
from ..evaluators import OpRecord, OpTrace, TraceMeter, compiled, eval_graph_ops, eval_op_circuit, op_inputs
from ..graph import Tensor
from ..kernels import run_kernel
from ..merkle import P2C, SOURCES, MerkleTree, build_tree, open_path, value_cell, var_cell
from . import messages as m
from .arbitrator import ClaimGame, Phase, Step

QNAN = 0x7FC00000


@dataclass
class OpArtifacts:
    """Circuit-level trace of one operation with its commitments."""

    position: int
    circuit: Circuit
    values: list[int]
    p2c: TraceTree
    out_tree: MerkleTree
    inputs: list[Tensor]
    input_digests: tuple[bytes, ...]
    k: int
    _trees: dict = field(default_factory=dict, repr=False)

    def leaf(self, t: int) -> bytes:
        return concrete_leaf(self.circuit, self.values, t, self.k)

    def inputs_tree(self) -> MerkleTree:
        if "inputs" not in self._trees:
            self._trees["inputs"] = digests_tree(self.input_digests, self.k)
        return self._trees["inputs"]

    def input_tree(self, j: int) -> MerkleTree:
        if j not in self._trees:
            self._trees[j] = tensor_tree_of(self.inputs[j], self.k)
        return self._trees[j]

    def outvars_tree(self) -> MerkleTree:
        if "outvars" not in self._trees:
            self._trees["outvars"] = build_tree(output_var_cells(self.circuit), self.k, OUTVARS)
        return self._trees["outvars"]


class TraceView:
    def __init__(self, pm: PreparedModel, inputs: Mapping[str, Tensor], trace: OpTrace,
                 overrides: Mapping[int, OpArtifacts] | None = None,
                 input_tensors: Mapping[int, list[Tensor]] | None = None,
                 meter: TraceMeter | None = None):
        self.pm = pm
        self.k = pm.k
        self.inputs = dict(inputs)
        self.trace = trace
        self.meter = meter
        self._p2: dict[int, OpArtifacts] = dict(overrides or {})
        self._input_tensors = dict(input_tensors or {})
        self._p1c: TraceTree | None = None
        self._trees: dict[str, MerkleTree] = {}

    @classmethod
    def honest(cls, pm: PreparedModel, inputs: Mapping[str, Tensor], meter: TraceMeter | None = None) -> "TraceView":
        return cls(pm, inputs, eval_graph_ops(pm, inputs, pm.k, meter), meter=meter)

    # phase 1 ---------------------------------------------------------------

    def op_leaf(self, position: int) -> bytes:
        r = self.trace.record(position)
        return op_leaf(r.p2s_root, r.inputs_root, r.output_digest)

    @property
    def p1c(self) -> TraceTree:
        if self._p1c is None:
            leaves = [self.op_leaf(p) for p in range(1, len(self.trace.records) + 1)]
            self._p1c = p1c_tree(self.trace.in_digest, leaves, self.trace.out_digest, self.k)
        return self._p1c

    def _tree(self, name: str) -> MerkleTree:
        t = self._trees.get(name)
        if t is None:
            if name == "in":
                t = digests_tree(self.trace.source_digests, self.k)
            elif name == "out":
                t = digests_tree(self.trace.output_digests, self.k)
            else:
                t = build_tree(self.pm.output_source_cells(), self.k, SOURCES)
            self._trees[name] = t
        return t

    @property
    def in_tree(self) -> MerkleTree:
        return self._tree("in")

    @property
    def out_tree(self) -> MerkleTree:
        return self._tree("out")

    @property
    def out_sources_tree(self) -> MerkleTree:
        return self._tree("out-sources")

    def sources_tree(self, position: int) -> tuple[list[bytes], MerkleTree]:
        cells = self.pm.source_cells(self.pm.node_at(position))
        return cells, build_tree(cells, self.k, SOURCES)

    def producer_evidence(self, producer: int, slot: int):
        if producer == 0:
            return open_path(self.in_tree, slot, self.trace.source_digests[slot])
        return open_path(self.p1c.body, producer - 1, self.op_leaf(producer))

    # phase 2 ---------------------------------------------------------------

    def op_input_tensors(self, position: int) -> list[Tensor]:
        if position in self._input_tensors:
            return self._input_tensors[position]
        return op_inputs(self.pm, self.trace, position, self.inputs)

    def p2(self, position: int) -> OpArtifacts:
        art = self._p2.get(position)
        if art is None:
            record = self.trace.record(position)
            tensors = self.op_input_tensors(position)
            bt = eval_op_circuit(self.pm, position, tensors)
            c = bt.circuit
            p2c = p2c_tree(c, bt.values, record.inputs_root, record.output_digest, self.k)
            art = OpArtifacts(position, c, bt.values, p2c, tensor_tree_of(record.output, self.k),
                              tensors, record.input_digests, self.k)
            if self.meter is not None:
                self.meter.track(art, c.n_vertices + 2)
            self._p2[position] = art
        return art

    def tree_for(self, cursor_tree: str, position: int | None) -> MerkleTree:
        if cursor_tree == "p1-body":
            return self.p1c.body
        if cursor_tree == "p1-out":
            return self.out_tree
        art = self.p2(position)
        return art.p2c.body if cursor_tree == "p2-body" else art.out_tree


# ---------------------------------------------------------------------------
# single-fault derivation

def _replace_record(view: TraceView, position: int, record: OpRecord) -> OpTrace:
    """Trace with ``record`` at ``position`` and every downstream operation recomputed."""
    pm, k = view.pm, view.k
    base = view.trace
    records = list(base.records[:position - 1]) + [record]
    changed = {pm.node_at(position).output}

    def lookup(edge: str) -> tuple[Tensor, bytes]:
        p, q = pm.edge_source(edge)
        if p == 0:
            return pm.source_tensor(edge, view.inputs), base.source_digests[q]
        r = records[p - 1]
        return r.output, r.output_digest

    for q in range(position + 1, len(base.records) + 1):
        node = pm.node_at(q)
        old = base.record(q)
        if not any(e in changed for e in node.inputs):
            records.append(old)
            continue
        pairs = [lookup(e) for e in node.inputs]
        out = run_kernel(node, [t for t, _ in pairs])
        in_d = tuple(d for _, d in pairs)
        records.append(OpRecord(q, node.id, old.p2s_root, in_d, digests_tree(in_d, k).root,
                                tensor_digest(out, k), out))
        changed.add(node.output)
    outputs, out_d = {}, []
    for name in pm.graph.output_names:
        t, d = lookup(name)
        outputs[name] = t
        out_d.append(d)
    return OpTrace(base.source_digests, base.in_digest, records, tuple(out_d),
                   digests_tree(out_d, k).root, outputs)


def _derived(view: TraceView, trace: OpTrace, overrides: dict[int, OpArtifacts],
             input_tensors: dict[int, list[Tensor]] | None = None) -> TraceView:
    meter = view.meter
    if meter is not None:
        meter.track(trace, len(trace))
        for art in overrides.values():
            meter.track(art, art.circuit.n_vertices + 2)
    return TraceView(view.pm, view.inputs, trace, overrides, input_tensors, meter)


def _with_output_elements(art: OpArtifacts, record: OpRecord,
                          changes: Mapping[int, int]) -> tuple[MerkleTree, Tensor]:
    """Artifacts and record whose output tensor has elements ``e -> payload`` replaced."""
    meta = art.circuit.output_meta
    payloads = record.output.payloads()
    for e, x in changes.items():
        payloads[e] = x
    tensor = Tensor.from_payloads(meta.dtype, meta.shape, payloads)
    out_tree = art.out_tree.with_leaves(
        {e: value_cell(meta.dtype, word_of(meta.dtype, x)) for e, x in changes.items()})
    return out_tree, tensor


def derive_bop_fault(view: TraceView, position: int, vertex: int, payload: int) -> TraceView:
    """View of a submitter whose basic operation ``vertex`` of op ``position`` returned ``payload``."""
    art = view.p2(position)
    c = art.circuit
    cc = compiled(c)
    changes = cc.propagate(art.values, vertex, payload)
    values = list(art.values)
    for var, x in changes.items():
        values[var] = x
    n_in = c.n_inputs
    cons = cc.consumers()
    touched = {var - n_in for var in changes if var >= n_in}
    for var in changes:
        touched.update(cons[var])
    body = art.p2c.body.with_leaves({t: concrete_leaf(c, values, t, view.k) for t in touched})
    out_index = {v: e for e, v in enumerate(c.outputs)}
    out_changes = {out_index[v]: x for v, x in changes.items() if v in out_index}
    record = view.trace.record(position)
    out_tree, tensor = _with_output_elements(art, record, out_changes)
    new_record = replace(record, output_digest=out_tree.root, output=tensor)
    p2c = TraceTree(P2C, art.p2c.in_digest, body, out_tree.root)
    new_art = OpArtifacts(position, c, values, p2c, out_tree, art.inputs, art.input_digests, view.k)
    return _derived(view, _replace_record(view, position, new_record), {position: new_art})


def derive_output_fault(view: TraceView, position: int, element: int, payload: int) -> TraceView:
    """Operation output tensor altered after an honest circuit evaluation."""
    art = view.p2(position)
    record = view.trace.record(position)
    out_tree, tensor = _with_output_elements(art, record, {element: payload})
    new_record = replace(record, output_digest=out_tree.root, output=tensor)
    p2c = TraceTree(P2C, art.p2c.in_digest, art.p2c.body, out_tree.root)
    new_art = replace(art, p2c=p2c, out_tree=out_tree, _trees={})
    return _derived(view, _replace_record(view, position, new_record), {position: new_art})


def derive_input_fault(view: TraceView, position: int, j: int, element: int, payload: int) -> TraceView:
    """Operation ``position`` computed on a corrupted copy of its input ``j``."""
    pm, k = view.pm, view.k
    tensors = list(view.op_input_tensors(position))
    t = tensors[j]
    payloads = t.payloads()
    payloads[element] = payload
    tensors[j] = Tensor.from_payloads(t.dtype, t.shape, payloads)
    node = pm.node_at(position)
    out = run_kernel(node, tensors)
    record = view.trace.record(position)
    in_d = tuple(tensor_digest(x, k) for x in tensors)
    new_record = replace(record, input_digests=in_d, inputs_root=digests_tree(in_d, k).root,
                         output_digest=tensor_digest(out, k), output=out)
    return _derived(view, _replace_record(view, position, new_record), {}, {position: tensors})


def fault_candidates(dtype: DType, payload: int) -> list[int]:
    """Replacement payloads tried in order until one changes the final output."""
    if dtype is DType.F32:
        cands = [QNAN, payload ^ 0x80000000, payload ^ 0x00800000, payload ^ 1]
    elif dtype is DType.I32:
        cands = [payload ^ 1, payload ^ -0x80000000, payload + 1 if payload < 2**31 - 1 else 0]
    else:
        cands = [payload ^ 1, payload ^ 0x80]
    return [x for x in cands if x != payload]


# ---------------------------------------------------------------------------
# parties

class Party:
    ident: str
    delay: str = "prompt"  # or "stall": move at the last legal tick

    def act(self, game: ClaimGame) -> m.Message | None:  # pragma: no cover - interface
        raise NotImplementedError


class Submitter(Party):
    """Answers from ``view``; optional misbehaviour on top of a (possibly faulty) view."""

    def __init__(self, ident: str, view: TraceView, *, wrong_children_round: int | None = None,
                 omit_api: str | None = None, delay: str = "prompt"):
        self.ident = ident
        self.view = view
        self.wrong_children_round = wrong_children_round
        self.omit_api = omit_api
        self.delay = delay
        self._children_sent = 0
        self._silent = False

    def claim(self, task_id: str, model_id: str) -> m.Claim:
        v = self.view
        return m.Claim(task_id, self.ident, model_id, v.trace.in_digest, v.pm.p1s_tree().root,
                       v.trace.out_digest)

    def act(self, game: ClaimGame) -> m.Message | None:
        msg = self._compose(game)
        if self._silent or (msg is not None and msg.API == self.omit_api):
            self._silent = True
            return None
        return msg

    def _compose(self, game: ClaimGame) -> m.Message | None:
        v, pm, k, seq = self.view, self.view.pm, self.view.k, game.seq
        d, c = game.dispute, game.cursor
        step, phase = game.step, game.phase
        if step is Step.COMMIT and phase is Phase.NARROW_P1:
            return m.CommitP1(seq, v.p1c.triple(), pm.p1s_tree().triple())
        if step is Step.CHILDREN:
            kids = v.tree_for(c.tree, d.op).children(c.level, c.index)
            self._children_sent += 1
            if self._children_sent == self.wrong_children_round:
                kids = list(kids)
                kids[0] = bytes((kids[0][0] ^ 1,)) + kids[0][1:]
            return m.Children(seq, tuple(kids))
        if step is Step.REVEAL and phase is Phase.LEAF_P1:
            p = c.index + 1
            sym = open_path(pm.p1s_tree().body, c.index, pm.p1s_leaf(pm.node_at(p)))
            return m.RevealP1(seq, v.op_leaf(p), sym, v.trace.record(p).input_digests)
        if step is Step.PROVE and phase is Phase.LEAF_P1:
            if d.pending == ("out",):
                j = c.index
                cells = pm.output_source_cells()
                p, q = pm.edge_source(pm.graph.output_names[j])
                return m.ProveOutput(seq, v.trace.output_digests[j], open_path(v.out_sources_tree, j, cells[j]),
                                     v.producer_evidence(p, q))
            j = d.pending[1]
            cells, tree = v.sources_tree(d.op)
            p, q = pm.edge_source(pm.node_at(d.op).inputs[j])
            return m.ProveSource(seq, open_path(tree, j, cells[j]), v.producer_evidence(p, q))
        if step is Step.COMMIT and phase is Phase.NARROW_P2:
            art = v.p2(d.op)
            p2s = pm.p2s(pm.node_at(d.op))
            return m.CommitP2(seq, art.p2c.body.root, p2s.triple(), art.circuit.n_inputs)
        if step is Step.REVEAL and phase is Phase.LEAF_P2:
            art = v.p2(d.op)
            cir = art.circuit
            t = c.index
            vert = cir.vertices[t]
            sym_cells = tuple(symbolic_operand_cell(o, cir) for o in vert.operands)
            sym_leaf = bop_leaf(vert.kind, sym_cells, var_cell(cir.n_inputs + t), k)
            sym_path = open_path(pm.p2s(pm.node_at(d.op)).body, t, sym_leaf)
            return m.RevealP2(seq, art.leaf(t), tuple(operand_value_cells(cir, art.values, t)), sym_path, sym_cells)
        if step is Step.PROVE and phase is Phase.LEAF_P2:
            art = v.p2(d.op)
            cir = art.circuit
            n_in = cir.n_inputs
            if d.pending == ("out",):
                e = c.index
                var = cir.outputs[e]
                cell = value_cell(cir.output_meta.dtype, v.trace.record(d.op).output.words()[e])
                return m.ProveP2Output(seq, cell, open_path(art.outvars_tree(), e, var_cell(var)),
                                       open_path(art.p2c.body, var - n_in, art.leaf(var - n_in)))
            kind, _, var = d.pending
            if kind == "operand":
                return m.ProveOperand(seq, open_path(art.p2c.body, var - n_in, art.leaf(var - n_in)))
            cells, tree = v.sources_tree(d.op)
            j, off = next((i, off) for i, (off, n) in enumerate(cir.input_offsets()) if off <= var < off + n)
            x = art.inputs[j]
            e = var - off
            elem = value_cell(x.dtype, x.words()[e])
            return m.ProveOperandInput(seq, open_path(tree, j, cells[j]),
                                       open_path(art.inputs_tree(), j, art.input_digests[j]),
                                       open_path(art.input_tree(j), e, elem))
        return None


class HonestVerifier(Party):
    def __init__(self, ident: str, view: TraceView, delay: str = "prompt", late_challenge: bool = False):
        self.ident = ident
        self.view = view
        self.delay = delay
        self.late_challenge = late_challenge

    def wants_challenge(self, game: ClaimGame) -> bool:
        return game.claim.output_digest != self.view.trace.out_digest

    def act(self, game: ClaimGame) -> m.Message | None:
        v, d, c, seq = self.view, game.dispute, game.cursor, game.seq
        step, phase = game.step, game.phase
        if step is Step.TOP:
            if phase is Phase.NARROW_P1:
                mine = v.p1c
                theirs = d.p1c
            else:
                mine = v.p2(d.op).p2c
                theirs = d.p2c
            if theirs[1] != mine.body.root:
                return m.Select(seq, 1)
            return m.Select(seq, 2 if theirs[2] != mine.out_digest else 1)
        if step is Step.SELECT:
            mine = v.tree_for(c.tree, d.op).children(c.level, c.index)
            theirs = game.children
            for i in range(c.real_children(game.k)):
                if theirs[i] != mine[i]:
                    return m.Select(seq, i)
            return m.Select(seq, 0)
        if step is Step.DISPUTE and phase is Phase.LEAF_P1:
            r = v.trace.record(d.op)
            if d.op_leaf[0] != r.p2s_root:
                return m.DisputeP1(seq, "structure")
            for j, (a, b) in enumerate(zip(d.input_digests, r.input_digests)):
                if a != b:
                    return m.DisputeP1(seq, "input", j)
            return m.DisputeP1(seq, "output")
        if step is Step.DISPUTE and phase is Phase.LEAF_P2:
            art = v.p2(d.op)
            t = d.bop
            if d.bop_leaf[0] != art.circuit.vertices[t].kind.code:
                return m.DisputeP2(seq, "kind")
            mine_cells = operand_value_cells(art.circuit, art.values, t)
            if len(mine_cells) == len(d.operand_cells):
                for a, (x, y) in enumerate(zip(d.operand_cells, mine_cells)):
                    if x != y:
                        return m.DisputeP2(seq, "operand", a)
            return m.DisputeP2(seq, "result")
        return None


STRATEGIES = ("spurious", "silent", "operand-lie", "structure-lie", "output-lie")


class MaliciousVerifier(Party):
    """Challenges a correct claim and argues according to ``strategy``."""

    def __init__(self, ident: str, strategy: str, seed: int = 0, delay: str = "prompt",
                 late_challenge: bool = False):
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown verifier strategy {strategy!r}; choose from {STRATEGIES}")
        self.ident = ident
        self.strategy = strategy
        self.rng = random.Random(seed)
        self.delay = delay
        self.late_challenge = late_challenge

    def wants_challenge(self, game: ClaimGame) -> bool:
        return True

    def act(self, game: ClaimGame) -> m.Message | None:
        s, rng, d, seq = self.strategy, self.rng, game.dispute, game.seq
        if s == "silent":
            return None
        step, phase = game.step, game.phase
        if step is Step.TOP:
            choices = [0, 1, 2] if s == "spurious" else [1, 2]
            return m.Select(seq, rng.choice(choices))
        if step is Step.SELECT:
            return m.Select(seq, rng.randrange(game.cursor.real_children(game.k)))
        if step is Step.DISPUTE and phase is Phase.LEAF_P1:
            kind = {"operand-lie": "input", "structure-lie": "structure", "output-lie": "output"}.get(s)
            kind = kind or rng.choice(["structure", "input", "output"])
            return m.DisputeP1(seq, kind, rng.randrange(len(d.input_digests)) if kind == "input" else 0)
        if step is Step.DISPUTE and phase is Phase.LEAF_P2:
            kind = {"operand-lie": "operand", "structure-lie": "kind", "output-lie": "result"}.get(s)
            kind = kind or rng.choice(["kind", "operand", "result"])
            return m.DisputeP2(seq, kind, rng.randrange(len(d.symbolic_cells)) if kind == "operand" else 0)
        return None
