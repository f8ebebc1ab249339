"""The trusted arbitrator: claim lifecycle plus the two-phase pinpoint game.

The arbitrator never sees tensors or graphs. It holds digests and small leaf
encodings, checks openings against roots it already trusts, and evaluates at
most one basic operation per dispute.

Time is a logical tick counter supplied with every message. Within one phase
both parties share a chess clock: each starts with ``depth * T // 2 - 1``
ticks and is charged for the ticks between the opponent's last move and its
own. A party whose remaining time has run out can be timed out by anyone.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

from ..commit import (
    OUTVARS, TAG_IN, decode_bop_leaf, decode_op_leaf, decode_op_symbolic_leaf, operand_root,
    trace_root,
)
from ..merkle import (
    DIGESTS, P1C, P1S, P2C, P2S, SOURCES, TENSOR, ZERO, MerklePath, decode_cell,
    decode_source_cell, depth_for, digests_root, hash_children, keccak, leaf_digest, value_cell,
    verify_path,
)
from ..numerics.bops import BopKind, ScalarValue, eval_bop
from . import messages as m


class ProtocolError(Exception):
    """A message the arbitrator refuses; the state is left untouched."""


class Phase(str, enum.Enum):
    AWAIT_CHALLENGE = "AwaitChallenge"
    NARROW_P1 = "NarrowP1"
    LEAF_P1 = "LeafArbP1"
    NARROW_P2 = "NarrowP2"
    LEAF_P2 = "LeafArbP2"
    ACCEPTED = "Accepted"
    REJECTED = "Rejected"


class Step(str, enum.Enum):
    IDLE = "idle"
    COMMIT = "commit"
    TOP = "top-select"
    CHILDREN = "children"
    SELECT = "select"
    REVEAL = "reveal"
    DISPUTE = "dispute"
    PROVE = "prove"


TERMINAL = (Phase.ACCEPTED, Phase.REJECTED)

# verdict causes
NO_CHALLENGE = "no-challenge-timeout"
ALL_FAILED = "all-verifiers-failed"
BOP_ARBITRATION = "bop-arbitration"
PATH_FAILURE = "path-verification-failure"
PARTY_TIMEOUT = "party-timeout"
STRUCTURE_MISMATCH = "structure-mismatch"
INPUT_MISMATCH = "input-mismatch"
OUTPUT_MISMATCH = "output-mismatch"
OPERAND_MISMATCH = "operand-mismatch"

SUBMITTER, VERIFIER = m.SUBMITTER, m.VERIFIER
MIN_PHASE_T = 10


@dataclass(frozen=True)
class Timeouts:
    """Challenge window and per-phase timeouts, in ticks.

    ``t_v=None`` picks ``2 * n_ops + 16`` for the claim's model.
    """

    t_v: int | None = None
    t_op: int = 10
    t_bop: int = 10

    def __post_init__(self) -> None:
        if self.t_op < MIN_PHASE_T or self.t_bop < MIN_PHASE_T:
            raise ValueError(f"phase timeouts must be at least {MIN_PHASE_T} ticks")
        if self.t_v is not None and self.t_v < 1:
            raise ValueError("challenge window must be positive")

    def window(self, n_ops: int) -> int:
        return self.t_v if self.t_v is not None else 2 * n_ops + 16


def phase_budget(depth: int, t: int) -> int:
    return depth * t // 2 - 1


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    cause: str
    tick: int
    op: int | None = None
    node_id: str | None = None
    bop: int | None = None
    detail: str = ""

    @property
    def outcome(self) -> str:
        return "accepted" if self.accepted else "rejected"


@dataclass(frozen=True)
class DisputeOutcome:
    verifier: str
    winner: str
    check: str
    tick: int
    op: int | None = None
    bop: int | None = None
    rounds_p1: int = 0
    rounds_p2: int = 0
    leaves_p1: int | None = None  # leaf count of the tree narrowed in each phase
    leaves_p2: int | None = None
    reached_p1: bool = False  # narrowing ran down to a leaf
    reached_p2: bool = False


@dataclass
class Cursor:
    tree: str  # "p1-body", "p1-out", "p2-body", "p2-out"
    domain: int
    n: int
    level: int
    index: int
    digest: bytes

    def real_children(self, k: int) -> int:
        width = self.n
        for _ in range(self.level - 1):
            width = -(-width // k)
        return max(0, min(k, width - self.index * k))


@dataclass
class _Dispute:
    verifier: str
    rounds_p1: int = 0
    rounds_p2: int = 0
    p1c: tuple[bytes, bytes, bytes] | None = None
    p1s: tuple[bytes, bytes, bytes] | None = None
    op: int | None = None  # 1-based position
    op_leaf: tuple[bytes, bytes, bytes] | None = None  # p2s root, inputs root, output digest
    sym_leaf: tuple[bytes, bytes, int, int] | None = None  # p2s root, sources root, n_bops, out numel
    input_digests: tuple[bytes, ...] = ()
    p2c: tuple[bytes, bytes, bytes] | None = None
    p2s: tuple[bytes, bytes, bytes] | None = None
    n_in: int = 0
    bop: int | None = None  # 0-based vertex index
    bop_leaf: tuple[int, bytes, bytes] | None = None
    operand_cells: tuple[bytes, ...] = ()
    sym_bop: tuple[int, bytes, bytes] | None = None
    symbolic_cells: tuple[bytes, ...] = ()
    pending: tuple = ()
    leaves: dict = field(default_factory=dict)
    reached: dict = field(default_factory=dict)

    def outcome(self, winner: str, check: str, tick: int, op, bop) -> DisputeOutcome:
        return DisputeOutcome(self.verifier, winner, check, tick, op, None if bop is None else bop + 1,
                              self.rounds_p1, self.rounds_p2, self.leaves.get(1), self.leaves.get(2),
                              self.reached.get(1, False), self.reached.get(2, False))


class ClaimGame:
    """State of one claim from submission to verdict."""

    def __init__(self, claim: m.Claim, endorsement: m.Endorsement, n_sources: int,
                 timeouts: Timeouts, tick: int, node_ids: tuple[str, ...] = ()):
        self.claim = claim
        self.endorsement = endorsement
        self.n_sources = n_sources
        self.k = endorsement.k
        self.timeouts = timeouts
        self.node_ids = node_ids
        self.verifiers = tuple(v for v in endorsement.quorum if v != claim.submitter)
        self.phase = Phase.AWAIT_CHALLENGE
        self.step = Step.IDLE
        self.seq = 1
        self.last_tick = tick
        self.submitted_at = tick
        self.window_left = timeouts.window(endorsement.n_ops)
        self.window_from = tick
        self.failed: set[str] = set()
        self.outcomes: list[DisputeOutcome] = []
        self.verdict: Verdict | None = None
        self.dispute: _Dispute | None = None
        self.cursor: Cursor | None = None
        self.turn: str | None = None
        self.turn_started = tick
        self.remaining: dict[str, int] = {}
        self.bop_evaluations = 0
        self._children: tuple[bytes, ...] = ()

    # ------------------------------------------------------------------ helpers

    @property
    def children(self) -> tuple[bytes, ...]:
        """The digest group posted in the current narrowing round."""
        return self._children

    @property
    def active_verifier(self) -> str | None:
        return self.dispute.verifier if self.dispute else None

    def party(self, role: str) -> str | None:
        if role == SUBMITTER:
            return self.claim.submitter
        return self.active_verifier

    def window_deadline(self) -> int | None:
        """Last tick at which a challenge is accepted (while no dispute runs)."""
        if self.phase is not Phase.AWAIT_CHALLENGE:
            return None
        return self.window_from + self.window_left - 1

    def turn_deadline(self) -> int | None:
        """Last tick at which the party on turn may still move."""
        if self.turn is None:
            return None
        return self.turn_started + self.remaining[self.turn]

    def _node_id(self, position: int | None) -> str | None:
        if position is None or not 1 <= position <= len(self.node_ids):
            return None
        return self.node_ids[position - 1]

    def _start_phase(self, depth: int, t: int, tick: int) -> None:
        b = phase_budget(depth, t)
        self.remaining = {SUBMITTER: b, VERIFIER: b}
        self.turn_started = tick

    def _expect(self, role: str, sender: str, phases: tuple[Phase, ...], step: Step) -> None:
        if self.phase not in phases or self.step is not step:
            raise ProtocolError(f"not expecting this message in {self.phase.value}/{self.step.value}")
        if self.turn != role or sender != self.party(role):
            raise ProtocolError(f"{sender} is not the party on turn")

    def _charge(self, role: str, tick: int) -> None:
        spent = tick - self.turn_started
        if spent > self.remaining[role]:
            raise ProtocolError(f"{role} deadline passed")
        self.remaining[role] -= spent

    def _pass(self, role: str, step: Step, tick: int) -> None:
        self.turn, self.step, self.turn_started = role, step, tick

    def _reject(self, cause: str, tick: int, op: int | None = None, bop: int | None = None,
                detail: str = "") -> None:
        d = self.dispute
        self.phase, self.step, self.turn = Phase.REJECTED, Step.IDLE, None
        self.verdict = Verdict(False, cause, tick, op, self._node_id(op),
                               None if bop is None else bop + 1, detail)
        if d is not None:
            self.outcomes.append(d.outcome(VERIFIER, cause, tick, op, bop))

    def _verifier_fails(self, check: str, tick: int) -> None:
        d = self.dispute
        assert d is not None
        self.outcomes.append(d.outcome(SUBMITTER, check, tick, d.op, d.bop))
        self.failed.add(d.verifier)
        self.dispute, self.cursor, self.turn = None, None, None
        if all(v in self.failed for v in self.verifiers):
            self.phase, self.step = Phase.ACCEPTED, Step.IDLE
            self.verdict = Verdict(True, ALL_FAILED, tick)
            return
        self.phase, self.step = Phase.AWAIT_CHALLENGE, Step.IDLE
        self.window_from = tick

    def _decide(self, equal: bool, check: str, cause: str, tick: int, op=None, bop=None, detail="") -> None:
        if equal:
            self._verifier_fails(check, tick)
        else:
            self._reject(cause, tick, op, bop, detail)

    # ------------------------------------------------------------------ dispatch

    def handle(self, sender: str, msg: m.Message, tick: int) -> Phase:
        if self.phase in TERMINAL:
            raise ProtocolError("claim already resolved")
        if tick < self.last_tick:
            raise ProtocolError("tick moves backwards")
        if getattr(msg, "seq", None) != self.seq:
            raise ProtocolError(f"stale or future message (seq {getattr(msg, 'seq', None)} != {self.seq})")
        handler: Callable | None = _HANDLERS.get(type(msg))
        if handler is None:
            raise ProtocolError(f"{msg.API} is not accepted after submission")
        handler(self, sender, msg, tick)
        self.seq += 1
        self.last_tick = tick
        return self.phase

    # ------------------------------------------------------------------ claim level

    def _challenge(self, sender: str, msg: m.Challenge, tick: int) -> None:
        if self.phase is not Phase.AWAIT_CHALLENGE:
            raise ProtocolError("a dispute is already running")
        if sender not in self.verifiers:
            raise ProtocolError(f"{sender} is not a verifier of this claim")
        if sender in self.failed:
            raise ProtocolError(f"{sender} already lost a dispute on this claim")
        if tick - self.window_from >= self.window_left:
            raise ProtocolError("challenge window closed")
        self.window_left -= tick - self.window_from
        self.dispute = _Dispute(sender)
        self.phase = Phase.NARROW_P1
        self._start_phase(depth_for(self.endorsement.n_ops, self.k), self.timeouts.t_op, tick)
        self._pass(SUBMITTER, Step.COMMIT, tick)

    def _finalize(self, sender: str, msg: m.Finalize, tick: int) -> None:
        if self.phase is not Phase.AWAIT_CHALLENGE:
            raise ProtocolError("a dispute is running")
        if tick - self.window_from < self.window_left:
            raise ProtocolError("challenge window still open")
        self.phase = Phase.ACCEPTED
        self.verdict = Verdict(True, NO_CHALLENGE, tick)

    def _timeout(self, sender: str, msg: m.Timeout, tick: int) -> None:
        if self.turn is None:
            raise ProtocolError("no party is on turn")
        if tick - self.turn_started <= self.remaining[self.turn]:
            raise ProtocolError(f"{self.turn} still has time")
        d = self.dispute
        assert d is not None
        if self.turn == SUBMITTER:
            self._reject(PARTY_TIMEOUT, tick, d.op, d.bop)
        else:
            self._verifier_fails(PARTY_TIMEOUT, tick)

    # ------------------------------------------------------------------ narrowing

    def _commit_p1(self, sender: str, msg: m.CommitP1, tick: int) -> None:
        self._expect(SUBMITTER, sender, (Phase.NARROW_P1,), Step.COMMIT)
        self._charge(SUBMITTER, tick)
        e, d = self.endorsement, self.dispute
        if trace_root(P1S, e.n_ops, *msg.symbolic) != e.p1s_root:
            return self._reject(PATH_FAILURE, tick, detail="symbolic triple does not open the endorsed root")
        if msg.concrete[0] != e.inputs_digest or msg.concrete[2] != self.claim.output_digest:
            return self._reject(PATH_FAILURE, tick, detail="concrete records differ from the claim")
        d.p1c, d.p1s = tuple(msg.concrete), tuple(msg.symbolic)
        self._pass(VERIFIER, Step.TOP, tick)

    def _select(self, sender: str, msg: m.Select, tick: int) -> None:
        phases = (Phase.NARROW_P1, Phase.NARROW_P2)
        if self.step is Step.TOP:
            self._expect(VERIFIER, sender, phases, Step.TOP)
            if msg.index not in (0, 1, 2):
                raise ProtocolError("top-level selection must be 0, 1 or 2")
            self._charge(VERIFIER, tick)
            self._select_top(msg.index, tick)
            return
        self._expect(VERIFIER, sender, phases, Step.SELECT)
        c = self.cursor
        if not 0 <= msg.index < c.real_children(self.k):
            raise ProtocolError("selected child does not exist")
        self._charge(VERIFIER, tick)
        c.digest = self._children[msg.index]
        c.level -= 1
        c.index = c.index * self.k + msg.index
        if c.level > 0:
            self._pass(SUBMITTER, Step.CHILDREN, tick)
            return
        p1 = self.phase is Phase.NARROW_P1
        self.dispute.reached[1 if p1 else 2] = True
        self.phase = Phase.LEAF_P1 if p1 else Phase.LEAF_P2
        if c.tree.endswith("body"):
            self._pass(SUBMITTER, Step.REVEAL, tick)
        else:
            self.dispute.pending = ("out",)
            self._pass(SUBMITTER, Step.PROVE, tick)

    def _select_top(self, index: int, tick: int) -> None:
        d = self.dispute
        if index == 0:
            # the in record is pinned by the endorsement or by the enclosing op leaf
            return self._verifier_fails("in-record", tick)
        if self.phase is Phase.NARROW_P1:
            if index == 1:
                self.cursor = Cursor("p1-body", P1C, self.endorsement.n_ops, 0, 0, d.p1c[1])
            else:
                self.cursor = Cursor("p1-out", DIGESTS, self.endorsement.n_outputs, 0, 0, d.p1c[2])
        else:
            if index == 1:
                self.cursor = Cursor("p2-body", P2C, d.sym_leaf[2], 0, 0, d.p2c[1])
            else:
                self.cursor = Cursor("p2-out", TENSOR, d.sym_leaf[3], 0, 0, d.p2c[2])
        self.cursor.level = depth_for(self.cursor.n, self.k)
        d.leaves[1 if self.phase is Phase.NARROW_P1 else 2] = self.cursor.n
        self._pass(SUBMITTER, Step.CHILDREN, tick)

    def _children_msg(self, sender: str, msg: m.Children, tick: int) -> None:
        self._expect(SUBMITTER, sender, (Phase.NARROW_P1, Phase.NARROW_P2), Step.CHILDREN)
        if len(msg.digests) != self.k or any(len(x) != 32 for x in msg.digests):
            raise ProtocolError(f"expected {self.k} digests of 32 bytes")
        self._charge(SUBMITTER, tick)
        c, d = self.cursor, self.dispute
        if self.phase is Phase.NARROW_P1:
            d.rounds_p1 += 1
        else:
            d.rounds_p2 += 1
        real = c.real_children(self.k)
        if hash_children(list(msg.digests), self.k) != c.digest:
            return self._reject(PATH_FAILURE, tick, d.op, d.bop, "children do not hash to the cursor")
        if any(x != ZERO for x in msg.digests[real:]):
            return self._reject(PATH_FAILURE, tick, d.op, d.bop, "padding positions are not zero")
        self._children = tuple(msg.digests)
        self._pass(VERIFIER, Step.SELECT, tick)

    # ------------------------------------------------------------------ phase 1 leaf

    def _reveal_p1(self, sender: str, msg: m.RevealP1, tick: int) -> None:
        self._expect(SUBMITTER, sender, (Phase.LEAF_P1,), Step.REVEAL)
        self._charge(SUBMITTER, tick)
        c, d, e = self.cursor, self.dispute, self.endorsement
        d.op = c.index + 1
        if leaf_digest(P1C, c.index, msg.op_leaf) != c.digest:
            return self._reject(PATH_FAILURE, tick, d.op, detail="operation leaf does not match the cursor")
        sp = msg.symbolic_path
        if sp.index != c.index or sp.n != e.n_ops or not verify_path(d.p1s[1], sp, self.k, P1S):
            return self._reject(PATH_FAILURE, tick, d.op, detail="symbolic leaf opening failed")
        try:
            d.op_leaf = decode_op_leaf(msg.op_leaf)
            d.sym_leaf = decode_op_symbolic_leaf(sp.leaf)
        except ValueError as exc:
            return self._reject(PATH_FAILURE, tick, d.op, detail=str(exc))
        if not msg.input_digests or digests_root(msg.input_digests, self.k) != d.op_leaf[1]:
            return self._reject(PATH_FAILURE, tick, d.op, detail="input digests do not open the inputs root")
        d.input_digests = tuple(msg.input_digests)
        self._pass(VERIFIER, Step.DISPUTE, tick)

    def _dispute_p1(self, sender: str, msg: m.DisputeP1, tick: int) -> None:
        self._expect(VERIFIER, sender, (Phase.LEAF_P1,), Step.DISPUTE)
        d = self.dispute
        if msg.kind not in ("structure", "input", "output"):
            raise ProtocolError(f"unknown operation dispute {msg.kind!r}")
        if msg.kind == "input" and not 0 <= msg.index < len(d.input_digests):
            raise ProtocolError("input index out of range")
        self._charge(VERIFIER, tick)
        if msg.kind == "structure":
            return self._decide(d.op_leaf[0] == d.sym_leaf[0], "structure", STRUCTURE_MISMATCH, tick, d.op)
        if msg.kind == "input":
            d.pending = ("input", msg.index)
            return self._pass(SUBMITTER, Step.PROVE, tick)
        self.phase = Phase.NARROW_P2
        self._start_phase(depth_for(d.sym_leaf[2], self.k), self.timeouts.t_bop, tick)
        self._pass(SUBMITTER, Step.COMMIT, tick)

    def _committed_output(self, producer: int, slot: int, evidence: MerklePath) -> bytes | None:
        """Tensor digest the concrete operation trace records for (producer, slot)."""
        d, e = self.dispute, self.endorsement
        if producer == 0:
            if evidence.index != slot or evidence.n != self.n_sources:
                return None
            if not verify_path(d.p1c[0], evidence, self.k, DIGESTS) or len(evidence.leaf) != 32:
                return None
            return evidence.leaf
        if evidence.index != producer - 1 or evidence.n != e.n_ops:
            return None
        if not verify_path(d.p1c[1], evidence, self.k, P1C):
            return None
        try:
            return decode_op_leaf(evidence.leaf)[2]
        except ValueError:
            return None

    def _prove_source(self, sender: str, msg: m.ProveSource, tick: int) -> None:
        self._expect(SUBMITTER, sender, (Phase.LEAF_P1,), Step.PROVE)
        d = self.dispute
        if not d.pending or d.pending[0] != "input":
            raise ProtocolError("no input dispute pending")
        self._charge(SUBMITTER, tick)
        j = d.pending[1]
        sp = msg.source_path
        if sp.index != j or sp.n != len(d.input_digests) or not verify_path(d.sym_leaf[1], sp, self.k, SOURCES):
            return self._reject(PATH_FAILURE, tick, d.op, detail="sources opening failed")
        p, q, _, _ = decode_source_cell(sp.leaf)
        if p >= d.op:
            return self._reject(PATH_FAILURE, tick, d.op, detail="source is not an earlier operation")
        committed = self._committed_output(p, q, msg.evidence)
        if committed is None:
            return self._reject(PATH_FAILURE, tick, d.op, detail="producer opening failed")
        self._decide(committed == d.input_digests[j], "input", INPUT_MISMATCH, tick, d.op)

    def _prove_p1_out(self, sender: str, msg: m.ProveOutput, tick: int) -> None:
        self._expect(SUBMITTER, sender, (Phase.LEAF_P1,), Step.PROVE)
        d, c, e = self.dispute, self.cursor, self.endorsement
        if d.pending != ("out",):
            raise ProtocolError("no output-record dispute pending")
        self._charge(SUBMITTER, tick)
        j = c.index
        if len(msg.tensor_digest) != 32 or leaf_digest(DIGESTS, j, msg.tensor_digest) != c.digest:
            return self._reject(PATH_FAILURE, tick, detail="output digest does not match the cursor")
        sp = msg.source_path
        if sp.index != j or sp.n != e.n_outputs or not verify_path(d.p1s[2], sp, self.k, SOURCES):
            return self._reject(PATH_FAILURE, tick, detail="output source opening failed")
        p, q, _, _ = decode_source_cell(sp.leaf)
        d.op = p or None
        committed = self._committed_output(p, q, msg.producer_path)
        if committed is None:
            return self._reject(PATH_FAILURE, tick, d.op, detail="producer opening failed")
        self._decide(committed == msg.tensor_digest, "output-record", OUTPUT_MISMATCH, tick, d.op)

    # ------------------------------------------------------------------ phase 2

    def _commit_p2(self, sender: str, msg: m.CommitP2, tick: int) -> None:
        self._expect(SUBMITTER, sender, (Phase.NARROW_P2,), Step.COMMIT)
        self._charge(SUBMITTER, tick)
        d = self.dispute
        p2s_root, _, n_bops, _ = d.sym_leaf
        if trace_root(P2S, n_bops, *msg.symbolic) != p2s_root:
            return self._reject(PATH_FAILURE, tick, d.op, detail="circuit triple does not open the symbolic root")
        if msg.symbolic[0] != keccak(bytes((P2S, TAG_IN)) + msg.n_inputs.to_bytes(4, "big")):
            return self._reject(PATH_FAILURE, tick, d.op, detail="input count does not open the in record")
        d.p2s = tuple(msg.symbolic)
        d.n_in = msg.n_inputs
        d.p2c = (d.op_leaf[1], msg.body_root, d.op_leaf[2])
        self._pass(VERIFIER, Step.TOP, tick)

    def _reveal_p2(self, sender: str, msg: m.RevealP2, tick: int) -> None:
        self._expect(SUBMITTER, sender, (Phase.LEAF_P2,), Step.REVEAL)
        if any(len(x) != 8 for x in msg.operand_cells + msg.symbolic_cells):
            raise ProtocolError("cells are 8 bytes")
        self._charge(SUBMITTER, tick)
        c, d = self.cursor, self.dispute
        d.bop = c.index
        if leaf_digest(P2C, c.index, msg.leaf) != c.digest:
            return self._reject(PATH_FAILURE, tick, d.op, d.bop, "basic-operation leaf does not match the cursor")
        try:
            d.bop_leaf = decode_bop_leaf(msg.leaf)
        except ValueError as exc:
            return self._reject(PATH_FAILURE, tick, d.op, d.bop, str(exc))
        if operand_root(msg.operand_cells, self.k) != d.bop_leaf[1]:
            return self._reject(PATH_FAILURE, tick, d.op, d.bop, "operand cells do not open the operand root")
        sp = msg.symbolic_path
        if sp.index != c.index or sp.n != d.sym_leaf[2] or not verify_path(d.p2s[1], sp, self.k, P2S):
            return self._reject(PATH_FAILURE, tick, d.op, d.bop, "symbolic leaf opening failed")
        d.sym_bop = decode_bop_leaf(sp.leaf)
        if operand_root(msg.symbolic_cells, self.k) != d.sym_bop[1]:
            return self._reject(PATH_FAILURE, tick, d.op, d.bop, "symbolic operand cells do not open")
        d.operand_cells, d.symbolic_cells = tuple(msg.operand_cells), tuple(msg.symbolic_cells)
        self._pass(VERIFIER, Step.DISPUTE, tick)

    def _dispute_p2(self, sender: str, msg: m.DisputeP2, tick: int) -> None:
        self._expect(VERIFIER, sender, (Phase.LEAF_P2,), Step.DISPUTE)
        d = self.dispute
        if msg.kind not in ("kind", "operand", "result"):
            raise ProtocolError(f"unknown basic-operation dispute {msg.kind!r}")
        if msg.kind == "operand" and not 0 <= msg.index < len(d.symbolic_cells):
            raise ProtocolError("operand index out of range")
        self._charge(VERIFIER, tick)
        if msg.kind == "kind":
            return self._decide(d.bop_leaf[0] == d.sym_bop[0], "kind", STRUCTURE_MISMATCH, tick, d.op, d.bop)
        if msg.kind == "result":
            return self._decide(self._result_holds(), "result", BOP_ARBITRATION, tick, d.op, d.bop)
        a = msg.index
        tag, dtype, word = decode_cell(d.symbolic_cells[a])
        if tag == "const":
            ok = a < len(d.operand_cells) and d.operand_cells[a] == value_cell(dtype, word)
            return self._decide(ok, "operand", OPERAND_MISMATCH, tick, d.op, d.bop)
        if word >= d.n_in:
            d.pending = ("operand", a, word)
        else:
            d.pending = ("operand-input", a, word)
        self._pass(SUBMITTER, Step.PROVE, tick)

    def _result_holds(self) -> bool:
        """Re-execute the disputed basic operation with the integer-only semantics."""
        d = self.dispute
        self.bop_evaluations += 1
        try:
            kind = BopKind.from_code(d.sym_bop[0])
            if len(d.operand_cells) != kind.arity:
                return False
            ops = []
            for cell in d.operand_cells:
                tag, dtype, word = decode_cell(cell)
                if tag != "value":
                    return False
                ops.append(ScalarValue.from_word(dtype, word))
            result = eval_bop(kind, ops, "emulated")
        except (ValueError, TypeError, KeyError):
            return False
        return value_cell(result.dtype, result.word) == d.bop_leaf[2]

    def _operand_cell(self, a: int) -> bytes | None:
        d = self.dispute
        return d.operand_cells[a] if a < len(d.operand_cells) else None

    def _defining_result(self, var: int, path: MerklePath) -> bytes | None:
        d = self.dispute
        t = var - d.n_in
        if t < 0 or path.index != t or path.n != d.sym_leaf[2]:
            return None
        if not verify_path(d.p2c[1], path, self.k, P2C):
            return None
        try:
            return decode_bop_leaf(path.leaf)[2]
        except ValueError:
            return None

    def _prove_operand(self, sender: str, msg: m.ProveOperand, tick: int) -> None:
        self._expect(SUBMITTER, sender, (Phase.LEAF_P2,), Step.PROVE)
        d = self.dispute
        if not d.pending or d.pending[0] != "operand":
            raise ProtocolError("no intermediate-operand dispute pending")
        self._charge(SUBMITTER, tick)
        _, a, var = d.pending
        result = self._defining_result(var, msg.defining_path)
        if result is None:
            return self._reject(PATH_FAILURE, tick, d.op, d.bop, "defining leaf opening failed")
        self._decide(result == self._operand_cell(a), "operand", OPERAND_MISMATCH, tick, d.op, d.bop)

    def _prove_operand_input(self, sender: str, msg: m.ProveOperandInput, tick: int) -> None:
        self._expect(SUBMITTER, sender, (Phase.LEAF_P2,), Step.PROVE)
        d = self.dispute
        if not d.pending or d.pending[0] != "operand-input":
            raise ProtocolError("no input-operand dispute pending")
        self._charge(SUBMITTER, tick)
        _, a, var = d.pending
        n_inputs = len(d.input_digests)
        sp, dp, ep = msg.source_path, msg.digest_path, msg.element_path
        fail = lambda why: self._reject(PATH_FAILURE, tick, d.op, d.bop, why)  # noqa: E731
        if sp.n != n_inputs or not verify_path(d.sym_leaf[1], sp, self.k, SOURCES):
            return fail("sources opening failed")
        _, _, offset, numel = decode_source_cell(sp.leaf)
        if not offset <= var < offset + numel:
            return fail("operand does not lie in the opened input")
        if dp.index != sp.index or dp.n != n_inputs or not verify_path(d.op_leaf[1], dp, self.k, DIGESTS):
            return fail("input digest opening failed")
        if len(dp.leaf) != 32 or ep.index != var - offset or ep.n != numel:
            return fail("element opening has the wrong shape")
        if not verify_path(dp.leaf, ep, self.k, TENSOR):
            return fail("element opening failed")
        self._decide(ep.leaf == self._operand_cell(a), "operand", OPERAND_MISMATCH, tick, d.op, d.bop)

    def _prove_p2_out(self, sender: str, msg: m.ProveP2Output, tick: int) -> None:
        self._expect(SUBMITTER, sender, (Phase.LEAF_P2,), Step.PROVE)
        d, c = self.dispute, self.cursor
        if d.pending != ("out",):
            raise ProtocolError("no output-element dispute pending")
        self._charge(SUBMITTER, tick)
        e = c.index
        if len(msg.cell) != 8 or leaf_digest(TENSOR, e, msg.cell) != c.digest:
            return self._reject(PATH_FAILURE, tick, d.op, detail="output element does not match the cursor")
        vp = msg.var_path
        if vp.index != e or vp.n != d.sym_leaf[3] or not verify_path(d.p2s[2], vp, self.k, OUTVARS):
            return self._reject(PATH_FAILURE, tick, d.op, detail="output variable opening failed")
        tag, _, var = decode_cell(vp.leaf)
        if tag != "var":
            return self._reject(PATH_FAILURE, tick, d.op, detail="output cell is not a variable")
        d.bop = var - d.n_in
        result = self._defining_result(var, msg.defining_path)
        if result is None:
            return self._reject(PATH_FAILURE, tick, d.op, d.bop, "defining leaf opening failed")
        self._decide(result == msg.cell, "output-element", OUTPUT_MISMATCH, tick, d.op, d.bop)

    # ------------------------------------------------------------------ views

    def snapshot(self) -> dict:
        c = self.cursor
        return {
            "task_id": self.claim.task_id,
            "phase": self.phase.value,
            "step": self.step.value,
            "seq": self.seq,
            "turn": self.turn,
            "active_verifier": self.active_verifier,
            "failed": sorted(self.failed),
            "cursor": None if c is None else {"tree": c.tree, "n": c.n, "level": c.level, "index": c.index},
            "verdict": None if self.verdict is None else {
                "outcome": self.verdict.outcome, "cause": self.verdict.cause, "tick": self.verdict.tick,
                "op": self.verdict.op, "node_id": self.verdict.node_id, "bop": self.verdict.bop},
        }


_HANDLERS: dict[type, Callable] = {
    m.Challenge: ClaimGame._challenge,
    m.Finalize: ClaimGame._finalize,
    m.Timeout: ClaimGame._timeout,
    m.CommitP1: ClaimGame._commit_p1,
    m.Select: ClaimGame._select,
    m.Children: ClaimGame._children_msg,
    m.RevealP1: ClaimGame._reveal_p1,
    m.DisputeP1: ClaimGame._dispute_p1,
    m.ProveSource: ClaimGame._prove_source,
    m.ProveOutput: ClaimGame._prove_p1_out,
    m.CommitP2: ClaimGame._commit_p2,
    m.RevealP2: ClaimGame._reveal_p2,
    m.DisputeP2: ClaimGame._dispute_p2,
    m.ProveOperand: ClaimGame._prove_operand,
    m.ProveOperandInput: ClaimGame._prove_operand_input,
    m.ProveP2Output: ClaimGame._prove_p2_out,
}


@dataclass
class Arbitrator:
    """Holds endorsements and one :class:`ClaimGame` per task."""

    timeouts: Timeouts = field(default_factory=Timeouts)
    endorsements: dict[str, tuple[m.Endorsement, int, tuple[str, ...]]] = field(default_factory=dict)
    games: dict[str, ClaimGame] = field(default_factory=dict)

    def endorse(self, e: m.Endorsement, n_sources: int, node_ids: tuple[str, ...] = ()) -> None:
        """Preload the quorum's unanimous endorsement of a task."""
        if e.task_id in self.endorsements:
            raise ProtocolError(f"task {e.task_id!r} already endorsed")
        self.endorsements[e.task_id] = (e, n_sources, tuple(node_ids))

    def submit(self, sender: str, msg: m.SubmitClaim, tick: int) -> ClaimGame:
        claim = msg.claim
        found = self.endorsements.get(claim.task_id)
        if found is None:
            raise ProtocolError(f"task {claim.task_id!r} has no endorsement")
        e, n_sources, node_ids = found
        if claim.task_id in self.games:
            raise ProtocolError(f"task {claim.task_id!r} already has a claim")
        if sender != claim.submitter or sender not in e.quorum:
            raise ProtocolError(f"{sender} is not a quorum member")
        if claim.model_id != e.model_id or claim.p1s_root != e.p1s_root or claim.inputs_digest != e.inputs_digest:
            raise ProtocolError("claim differs from the endorsed task")
        game = ClaimGame(claim, e, n_sources, self.timeouts, tick, node_ids)
        self.games[claim.task_id] = game
        return game

    def handle(self, task_id: str, sender: str, msg: m.Message, tick: int) -> Phase:
        if isinstance(msg, m.SubmitClaim):
            return self.submit(sender, msg, tick).phase
        game = self.games.get(task_id)
        if game is None:
            raise ProtocolError(f"no claim for task {task_id!r}")
        return game.handle(sender, msg, tick)
