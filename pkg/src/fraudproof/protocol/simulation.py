"""Discrete-tick driver for one claim: an arbitrator, a submitter and its verifiers."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

from ..commit import PreparedModel
from ..corpus import get_model, random_inputs
from ..evaluators import TraceMeter
from ..graph import Graph, Tensor
from ..merkle import P2C, build_from_digests, depth_for
from . import messages as m
from .arbitrator import (
    SUBMITTER, TERMINAL, Arbitrator, ClaimGame, Phase, ProtocolError, Timeouts, Verdict,
)
from .parties import (
    STRATEGIES, HonestVerifier, MaliciousVerifier, Party, Submitter, TraceView, derive_bop_fault,
    derive_input_fault, derive_output_fault, fault_candidates,
)


@dataclass(frozen=True)
class TranscriptRecord:
    tick: int
    sender: str
    api: str
    digest: str
    phase: str
    size: int
    accepted: bool = True


@dataclass
class World:
    """Everything a quorum agrees on before a claim: model, inputs and the honest trace."""

    model_id: str
    pm: PreparedModel
    inputs: dict[str, Tensor]
    honest: TraceView

    @property
    def k(self) -> int:
        return self.pm.k

    @property
    def n_ops(self) -> int:
        return self.pm.n_ops

    def n_bops(self, position: int) -> int:
        return self.pm.circuit(self.pm.node_at(position)).n_vertices

    @property
    def d_op(self) -> int:
        return depth_for(self.n_ops, self.k)

    @property
    def d_bop(self) -> int:
        return max(depth_for(self.n_bops(p), self.k) for p in range(1, self.n_ops + 1))

    def endorsement(self, task_id: str, quorum: Sequence[str]) -> m.Endorsement:
        return m.Endorsement(task_id, self.model_id, self.pm.p1s_tree().root, self.honest.trace.in_digest,
                             self.n_ops, len(self.pm.graph.outputs), tuple(quorum), self.k)

    def position_of(self, op: str | int) -> int:
        if isinstance(op, int) or str(op).isdigit():
            p = int(op)
            if not 1 <= p <= self.n_ops:
                raise ValueError(f"operation position {p} outside 1..{self.n_ops}")
            return p
        if op not in self.pm.position:
            raise ValueError(f"no operation with id {op!r}")
        return self.pm.position[op]


def make_world(model: Graph | str, inputs: Mapping[str, Tensor] | None = None, seed: int = 0,
               k: int = 32, meter: TraceMeter | None = None, pm: PreparedModel | None = None) -> World:
    g = get_model(model) if isinstance(model, str) else model
    if pm is None:
        pm = PreparedModel(g, k)
    values = dict(inputs) if inputs is not None else random_inputs(g, seed)
    return World(g.name, pm, values, TraceView.honest(pm, values, meter))


def tick_bound(world: World, quorum: int, timeouts: Timeouts) -> int:
    """T^v + m * (d_op * T^op + d_bop * T^bop)."""
    return timeouts.window(world.n_ops) + quorum * (world.d_op * timeouts.t_op + world.d_bop * timeouts.t_bop)


@dataclass
class SimResult:
    verdict: Verdict
    transcript: list[TranscriptRecord]
    outcomes: list
    ticks: int
    bound: int
    quorum: int
    d_op: int
    d_bop: int
    bop_evaluations: int
    refused: int = 0
    trace_peak: int | None = None
    fault: str = "none"
    masked: bool = False

    @property
    def bytes_sent(self) -> int:
        return sum(r.size for r in self.transcript if r.accepted)

    @property
    def rounds_p1(self) -> list[int]:
        return [o.rounds_p1 for o in self.outcomes]

    @property
    def rounds_p2(self) -> list[int]:
        return [o.rounds_p2 for o in self.outcomes if o.rounds_p2]

    def to_dict(self) -> dict:
        v = self.verdict
        return {
            "verdict": {"outcome": v.outcome, "cause": v.cause, "tick": v.tick, "op": v.op,
                        "node_id": v.node_id, "bop": v.bop, "detail": v.detail},
            "fault": self.fault,
            "masked": self.masked,
            "ticks": self.ticks,
            "tick_bound": self.bound,
            "quorum": self.quorum,
            "depth_op": self.d_op,
            "depth_bop": self.d_bop,
            "rounds_p1": self.rounds_p1,
            "rounds_p2": self.rounds_p2,
            "bop_evaluations": self.bop_evaluations,
            "messages": sum(1 for r in self.transcript if r.accepted),
            "refused": self.refused,
            "bytes": self.bytes_sent,
            "trace_peak": self.trace_peak,
            "disputes": [asdict(o) for o in self.outcomes],
            "transcript": [asdict(r) for r in self.transcript],
        }


MAX_STEPS = 1_000_000


def run_game(world: World, submitter: Submitter, verifiers: Sequence[Party],
             timeouts: Timeouts | None = None, task_id: str = "task-0",
             meter: TraceMeter | None = None) -> SimResult:
    """Drive one claim to its verdict; honest moves land one tick after the previous message."""
    timeouts = timeouts or Timeouts()
    arb = Arbitrator(timeouts)
    quorum = (submitter.ident,) + tuple(v.ident for v in verifiers)
    arb.endorse(world.endorsement(task_id, quorum), len(world.pm.sources),
                tuple(n.id for n in world.pm.order))
    transcript: list[TranscriptRecord] = []
    state = {"tick": 0, "refused": 0}
    if meter is not None:
        meter.peak = meter.live

    def deliver(sender: str, msg: m.Message, t: int) -> bool:
        try:
            phase = arb.handle(task_id, sender, msg, t)
        except ProtocolError:
            game = arb.games.get(task_id)
            transcript.append(TranscriptRecord(t, sender, msg.API, msg.digest().hex(),
                                               game.phase.value if game else "-", msg.size(), False))
            state["refused"] += 1
            return False
        transcript.append(TranscriptRecord(t, sender, msg.API, msg.digest().hex(), phase.value, msg.size()))
        state["tick"] = t
        return True

    if not deliver(submitter.ident, m.SubmitClaim(submitter.claim(task_id, world.model_id)), 0):
        raise ProtocolError("claim refused")
    game: ClaimGame = arb.games[task_id]
    by_id = {v.ident: v for v in verifiers}
    for _ in range(MAX_STEPS):
        if game.phase in TERMINAL:
            break
        tick = state["tick"]
        if game.phase is Phase.AWAIT_CHALLENGE:
            ready = [v for v in verifiers if v.ident not in game.failed and v.wants_challenge(game)]
            deadline = game.window_deadline()
            if ready:
                v = ready[0]
                t = deadline if getattr(v, "late_challenge", False) else min(tick + 1, deadline)
                if deliver(v.ident, m.Challenge(game.seq), max(t, tick)):
                    continue
            deliver(submitter.ident, m.Finalize(game.seq), game.window_from + game.window_left)
            continue
        role = game.turn
        actor = submitter if role == SUBMITTER else by_id[game.active_verifier]
        msg = actor.act(game)
        if msg is not None:
            t = game.turn_deadline() if actor.delay == "stall" else tick + 1
            if deliver(actor.ident, msg, max(t, tick)):
                continue
        other = game.active_verifier if role == SUBMITTER else submitter.ident
        deliver(other, m.Timeout(game.seq), game.turn_deadline() + 1)
    else:  # pragma: no cover - the clocks guarantee termination
        raise RuntimeError("claim did not terminate")
    return SimResult(game.verdict, transcript, list(game.outcomes), game.verdict.tick,
                     tick_bound(world, len(quorum), timeouts), len(quorum), world.d_op, world.d_bop,
                     game.bop_evaluations, state["refused"],
                     None if meter is None else meter.peak)


# ---------------------------------------------------------------------------
# fault specifications

@dataclass(frozen=True)
class FaultSpec:
    """Parsed ``--fault`` value.

    Forms: ``none``; ``bop:OP:VERTEX[:PAYLOAD]``; ``op-output:OP:ELEMENT[:PAYLOAD]``;
    ``input:OP:J[:ELEMENT]``; ``wrong-children:ROUND``; ``omit:API``;
    ``verifier:STRATEGY[:COUNT]``. OP is a node id or a 1-based position;
    payloads are hex (``0x...``) or decimal raw payloads.
    """

    kind: str
    op: str | None = None
    a: int = 0
    payload: int | None = None
    text: str = "none"
    count: int | None = None

    @classmethod
    def parse(cls, text: str) -> "FaultSpec":
        parts = text.strip().split(":")
        kind = parts[0]
        try:
            if kind == "none" and len(parts) == 1:
                return cls("none", text=text)
            if kind in ("bop", "op-output", "input") and len(parts) in (3, 4):
                payload = int(parts[3], 0) if len(parts) == 4 else None
                return cls(kind, parts[1], int(parts[2]), payload, text)
            if kind == "wrong-children" and len(parts) == 2:
                return cls(kind, a=int(parts[1]), text=text)
            if kind == "omit" and len(parts) == 2 and parts[1] in m.MESSAGE_TYPES:
                return cls(kind, op=parts[1], text=text)
            if kind == "verifier" and len(parts) in (2, 3) and parts[1] in STRATEGIES:
                return cls(kind, op=parts[1], count=int(parts[2]) if len(parts) == 3 else None, text=text)
        except ValueError:
            pass
        raise ValueError(f"cannot parse fault spec {text!r}")


def _payload_tries(spec: FaultSpec, dtype, current: int) -> list[int]:
    return [spec.payload] if spec.payload is not None else fault_candidates(dtype, current)


def faulty_view(world: World, spec: FaultSpec) -> tuple[TraceView, bool]:
    """(submitter view, masked): masked when no tried payload changes the final output."""
    base = world.honest
    if spec.kind not in ("bop", "op-output", "input"):
        return base, False
    p = world.position_of(spec.op)
    art = base.p2(p)
    c = art.circuit
    if spec.kind == "bop":
        if not 0 <= spec.a < c.n_vertices:
            raise ValueError(f"vertex {spec.a} outside 0..{c.n_vertices - 1}")
        dtype = c.vertices[spec.a].dtype
        current = art.values[c.n_inputs + spec.a]
        derive = lambda x: derive_bop_fault(base, p, spec.a, x)  # noqa: E731
    elif spec.kind == "op-output":
        meta = c.output_meta
        if not 0 <= spec.a < meta.numel:
            raise ValueError(f"element {spec.a} outside the output")
        dtype = meta.dtype
        current = base.trace.record(p).output.payloads()[spec.a]
        derive = lambda x: derive_output_fault(base, p, spec.a, x)  # noqa: E731
    else:
        tensors = base.op_input_tensors(p)
        if not 0 <= spec.a < len(tensors):
            raise ValueError(f"input {spec.a} outside the operation's inputs")
        elem = spec.payload or 0
        t = tensors[spec.a]
        current = t.payloads()[elem]
        view = base
        for x in fault_candidates(t.dtype, current):
            view = derive_input_fault(base, p, spec.a, elem, x)
            if view.trace.out_digest != base.trace.out_digest:
                return view, False
        return view, True
    view = None
    for x in _payload_tries(spec, dtype, current):
        view = derive(x)
        if view.trace.out_digest != base.trace.out_digest:
            return view, False
    return view if view is not None else base, True


def build_parties(world: World, quorum: int, faults: Sequence[FaultSpec], seed: int = 0,
                  stall_verifiers: bool = False, late_challenge: bool = False,
                  stall_submitter: bool = False) -> tuple[Submitter, list[Party], bool]:
    if quorum < 2:
        raise ValueError("a quorum needs the submitter and at least one verifier")
    view, masked = world.honest, False
    wrong_round, omit, strategy, n_bad = None, None, None, 0
    for f in faults:
        if f.kind in ("bop", "op-output", "input"):
            view, masked = faulty_view(world, f)
        elif f.kind == "wrong-children":
            wrong_round = f.a
        elif f.kind == "omit":
            omit = f.op
        elif f.kind == "verifier":
            strategy = f.op
            n_bad = f.count if f.count is not None else quorum - 1
    if n_bad > quorum - 1:
        raise ValueError("more malicious verifiers than verifier seats")
    sub = Submitter("submitter", view, wrong_children_round=wrong_round, omit_api=omit,
                    delay="stall" if stall_submitter else "prompt")
    delay = "stall" if stall_verifiers else "prompt"
    verifiers: list[Party] = []
    for i in range(1, quorum):
        ident = f"verifier-{i}"
        if i <= n_bad:
            verifiers.append(MaliciousVerifier(ident, strategy, seed * 1000 + i, delay, late_challenge))
        else:
            verifiers.append(HonestVerifier(ident, world.honest, delay, late_challenge))
    return sub, verifiers, masked


def simulate(model: Graph | str, inputs: Mapping[str, Tensor] | None = None, quorum: int = 2,
             faults: Sequence[str | FaultSpec] = (), k: int = 32, seed: int = 0,
             timeouts: Timeouts | None = None, world: World | None = None,
             stall_verifiers: bool = False, late_challenge: bool = False,
             stall_submitter: bool = False) -> SimResult:
    specs = [f if isinstance(f, FaultSpec) else FaultSpec.parse(f) for f in faults]
    world = world or make_world(model, inputs, seed, k)
    sub, verifiers, masked = build_parties(world, quorum, specs, seed, stall_verifiers, late_challenge,
                                            stall_submitter)
    result = run_game(world, sub, verifiers, timeouts)
    result.fault = ",".join(s.text for s in specs) or "none"
    result.masked = masked
    return result


# ---------------------------------------------------------------------------
# sweeps

@dataclass
class SweepReport:
    model: str
    trials: int = 0
    rejected: int = 0
    pinpointed: int = 0
    masked: int = 0
    max_ticks: int = 0
    bound: int = 0
    over_bound: int = 0
    inexact_rounds: int = 0
    failures: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.trials > 0 and self.pinpointed == self.trials - self.masked and not self.failures

    @property
    def live(self) -> bool:
        """Every dispute finished within the tick bound, narrowing in exactly ceil(log_k n) rounds."""
        return self.over_bound == 0 and self.inexact_rounds == 0


def rounds_exact(outcomes, k: int) -> bool:
    """Every narrowing that reached a leaf took exactly ceil(log_k n) rounds."""
    for o in outcomes:
        for reached, leaves, rounds in ((o.reached_p1, o.leaves_p1, o.rounds_p1),
                                        (o.reached_p2, o.leaves_p2, o.rounds_p2)):
            if reached and rounds != depth_for(leaves, k):
                return False
    return True


def bop_fault_sweep(world: World, positions: Sequence[int] | None = None, timeouts: Timeouts | None = None,
                    limit: int | None = None) -> SweepReport:
    """One trial per basic operation: inject, dispute with one honest verifier, check the pinpoint."""
    rep = SweepReport(world.model_id)
    positions = positions or range(1, world.n_ops + 1)
    verifier = HonestVerifier("verifier-1", world.honest)
    for p in positions:
        art = world.honest.p2(p)
        c = art.circuit
        for t in range(c.n_vertices):
            if limit is not None and rep.trials >= limit:
                return rep
            rep.trials += 1
            view, masked = faulty_view(world, FaultSpec("bop", str(p), t))
            if masked:
                rep.masked += 1
                continue
            res = run_game(world, Submitter("submitter", view), [verifier], timeouts)
            v = res.verdict
            rep.max_ticks = max(rep.max_ticks, res.ticks)
            rep.bound = res.bound
            rep.over_bound += res.ticks > res.bound
            rep.inexact_rounds += not rounds_exact(res.outcomes, world.k)
            if not v.accepted:
                rep.rejected += 1
            if not v.accepted and v.op == p and v.bop == t + 1:
                rep.pinpointed += 1
            elif len(rep.failures) < 20:
                rep.failures.append({"op": p, "vertex": t, "verdict": v.outcome, "cause": v.cause,
                                     "got_op": v.op, "got_bop": v.bop})
    return rep


def malicious_runs(world: World, strategy: str, runs: int = 100, quorum: int = 3, seed: int = 0,
                   timeouts: Timeouts | None = None) -> list[SimResult]:
    """Honest submitter against ``quorum - 1`` verifiers following ``strategy``."""
    out = []
    for r in range(runs):
        sub = Submitter("submitter", world.honest)
        bad = [MaliciousVerifier(f"verifier-{i}", strategy, seed * 7919 + r * 31 + i) for i in range(1, quorum)]
        out.append(run_game(world, sub, bad, timeouts))
    return out


# ---------------------------------------------------------------------------
# one-phase contrast

def one_phase_dispute(world: World, submitter_view: TraceView, verifier_view: TraceView,
                      meter: TraceMeter) -> dict:
    """Single-phase variant: each party commits one flat tree over every basic operation.

    Both parties must hold the circuit traces of all operations at once; the
    narrowing then runs directly over the flat leaves.
    """
    k = world.k
    meter.peak = meter.live
    flats = []
    for view in (submitter_view, verifier_view):
        digests: list[bytes] = []
        for p in range(1, world.n_ops + 1):
            art = view.p2(p)
            digests.extend(art.p2c.body.levels[0])
        flats.append(build_from_digests(digests, k, P2C, 42))
    sub_tree, ver_tree = flats
    level, index, rounds = sub_tree.depth, 0, 0
    while level > 0:
        mine, theirs = ver_tree.children(level, index), sub_tree.children(level, index)
        sel = next((i for i in range(k) if mine[i] != theirs[i]), 0)
        index, level, rounds = index * k + sel, level - 1, rounds + 1
    divergent = sub_tree.levels[0][index] != ver_tree.levels[0][index]
    return {"leaves": sub_tree.n, "rounds": rounds, "leaf": index, "divergent": divergent,
            "trace_peak": meter.peak}


def memory_experiment(model: str = "mini-cnn", seed: int = 0, k: int = 32) -> list[dict]:
    """Peak live trace records, two-phase vs one-phase, for a fault in each operation."""
    g = get_model(model)
    pm = PreparedModel(g, k)
    inputs = random_inputs(g, seed)
    rows = []
    n1 = pm.n_ops
    n2 = [pm.circuit(pm.node_at(p)).n_vertices for p in range(1, n1 + 1)]
    for p in range(1, n1 + 1):
        meter = TraceMeter()
        world = make_world(g, inputs, k=k, meter=meter, pm=pm)
        sub_base = TraceView.honest(pm, inputs, meter)
        spec = FaultSpec("bop", str(p), n2[p - 1] - 1)
        w_sub = World(world.model_id, pm, inputs, sub_base)
        view, masked = faulty_view(w_sub, spec)
        del sub_base, w_sub
        res = run_game(world, Submitter("submitter", view), [HonestVerifier("verifier-1", world.honest)],
                       meter=meter)
        two_phase = res.trace_peak
        del res
        meter1 = TraceMeter()
        w1 = World(world.model_id, pm, inputs, TraceView.honest(pm, inputs, meter1))
        sub1, _ = faulty_view(w1, spec)
        one = one_phase_dispute(world, sub1, TraceView.honest(pm, inputs, meter1), meter1)
        del w1, sub1
        rows.append({"op": p, "n_ops": n1, "n_bops": n2[p - 1], "total_bops": sum(n2),
                     "two_phase_peak": two_phase, "one_phase_peak": one["trace_peak"],
                     "one_phase_rounds": one["rounds"], "masked": masked})
    return rows
