"""HTTP service over the evaluators, commitments, simulator and a live arbitrator."""

from __future__ import annotations

import functools
from typing import Any, Mapping

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from . import __version__
from . import experiments as ex
from .circuit import DedupCache, dedup_key, dump_circuit, node_input_meta, profile_graph, serialize_circuit
from .commit import PreparedModel
from .corpus import MODELS, get_model, random_inputs
from .evaluators import (
    eval_graph_native, eval_graph_ops, eval_op_circuit, op_inputs,
)
from .graph import (
    Graph, GraphError, ModelParseError, Tensor, graph_from_document, inputs_from_document,
    inputs_to_document, validate_graph,
)
from .numerics.bops import BopKind
from .numerics.corners import export_cases
from .protocol import messages as m
from .protocol.arbitrator import Arbitrator, ProtocolError, Timeouts
from .protocol.parties import TraceView
from .protocol.simulation import make_world, simulate
from .schemas import (
    CommitResponse, ConsistencyRequest, ConsistencyResponse, CornersRequest, DisputeRequest,
    EvalRequest, EvalResponse, GameState, LowerRequest, LowerResponse, MessageRequest,
    ModelInputs, OpenClaimRequest, ProfileRequest, SuiteResult, SweepKRequest,
)


@functools.lru_cache(maxsize=16)
def _corpus_model(name: str, k: int) -> PreparedModel:
    return PreparedModel(get_model(name), k)


def resolve_model(ref: str | Mapping[str, Any], k: int = 32) -> PreparedModel:
    if isinstance(ref, str):
        try:
            return _corpus_model(ref, k)
        except KeyError as exc:
            raise HTTPException(404, str(exc.args[0])) from None
    g = graph_from_document(ref)
    diags = validate_graph(g)
    if diags:
        raise GraphError(diags)
    return PreparedModel(g, k)


def resolve_inputs(g: Graph, req: ModelInputs) -> dict[str, Tensor]:
    if req.inputs is None:
        return random_inputs(g, req.seed)
    return inputs_from_document(req.inputs)


def _hex(b: bytes) -> str:
    return "0x" + b.hex()


def _timeouts(req) -> Timeouts:
    return Timeouts(req.t_v, req.t_op, req.t_bop)


def _bop_trace(pm: PreparedModel, inputs: dict[str, Tensor], node_id: str) -> list[dict[str, Any]]:
    if node_id not in pm.position:
        raise HTTPException(404, f"no node {node_id!r}")
    p = pm.position[node_id]
    trace = eval_graph_ops(pm, inputs, upto=p)
    bt = eval_op_circuit(pm, p, op_inputs(pm, trace, p, inputs))
    out = []
    for vi in bt:
        rec: dict[str, Any] = {"position": vi.position, "tag": vi.tag}
        if vi.tag == "bop":
            rec.update(kind=vi.kind.value, operands=[f"0x{o.word:08x}" for o in vi.operands],
                       result=f"0x{vi.result.word:08x}")
        else:
            rec["values"] = [f"0x{v.word:08x}" for v in vi.values]
        out.append(rec)
    return out


def create_app() -> FastAPI:
    app = FastAPI(title="fraudproof", version=__version__)
    app.state.arbitrators = {}

    @app.exception_handler(GraphError)
    async def _graph_error(request: Request, exc: GraphError):
        return JSONResponse(status_code=422, content={"detail": "invalid model", "diagnostics": exc.diagnostics})

    @app.exception_handler(ModelParseError)
    async def _parse_error(request: Request, exc: ModelParseError):
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.exception_handler(ValueError)
    async def _value_error(request: Request, exc: ValueError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.get("/health")
    def health() -> dict[str, Any]:
        return {"status": "ok", "version": __version__}

    @app.get("/models")
    def models() -> dict[str, Any]:
        return {"models": list(MODELS) + ["chain-<n>"]}

    @app.post("/lower", response_model=LowerResponse)
    def lower(req: LowerRequest) -> LowerResponse:
        g = resolve_model(req.model).graph
        try:
            node = g.node(req.node)
        except KeyError:
            raise HTTPException(404, f"no node {req.node!r}") from None
        metas = node_input_meta(g, node)
        c = DedupCache().get(node, metas)
        resp = LowerResponse(node=node.id, kind=node.kind, n_inputs=c.n_inputs, n_vertices=c.n_vertices,
                             n_outputs=c.n_outputs, dedup_key=dedup_key(node, metas))
        if req.format == "text":
            resp.text = dump_circuit(c)
        else:
            resp.vis = [{"position": vi.position, "tag": vi.tag,
                         "kind": vi.kind.value if vi.kind else None,
                         "operands": [o if isinstance(o, int) else f"#{o.dtype.value}:0x{o.value.word:08x}"
                                      for o in vi.operands],
                         "result": vi.result, "n_inputs": vi.n_inputs, "outputs": list(vi.outputs)}
                        for vi in serialize_circuit(c)]
        return resp

    @app.post("/eval", response_model=EvalResponse)
    def evaluate(req: EvalRequest) -> EvalResponse:
        pm = resolve_model(req.model, req.k)
        inputs = resolve_inputs(pm.graph, req)
        if req.trace == "bop":
            if req.node is None:
                raise HTTPException(400, "a basic-operation trace needs a node")
            trace = _bop_trace(pm, inputs, req.node)
        else:
            trace = None
        native = eval_graph_native(pm, inputs, req.threads)
        if req.trace == "op":
            ops = eval_graph_ops(pm, inputs)
            trace = [{"position": r.position, "node_id": r.node_id, "p2s_root": _hex(r.p2s_root),
                      "input_digests": [_hex(d) for d in r.input_digests],
                      "output_digest": _hex(r.output_digest),
                      "output": inputs_to_document({r.node_id: r.output})[r.node_id]}
                     for r in ops.records]
            if req.node is not None:
                trace = [t for t in trace if t["node_id"] == req.node]
        return EvalResponse(model=pm.graph.name, outputs=inputs_to_document(native.outputs),
                            digest=_hex(native.digest), output_digests=[_hex(d) for d in native.output_digests],
                            trace=trace)

    @app.post("/commit", response_model=CommitResponse)
    def commit(req: ModelInputs) -> CommitResponse:
        pm = resolve_model(req.model, req.k)
        inputs = resolve_inputs(pm.graph, req)
        view = TraceView(pm, inputs, eval_graph_ops(pm, inputs))
        return CommitResponse(model=pm.graph.name, k=pm.k, n_ops=pm.n_ops, p1s_root=_hex(pm.p1s_tree().root),
                              p1c_root=_hex(view.p1c.root), inputs_digest=_hex(view.trace.in_digest),
                              output_digest=_hex(view.trace.out_digest),
                              op_leaves=[_hex(view.op_leaf(p)) for p in range(1, pm.n_ops + 1)])

    @app.post("/dispute")
    def dispute(req: DisputeRequest) -> dict[str, Any]:
        pm = resolve_model(req.model, req.k)
        inputs = resolve_inputs(pm.graph, req)
        world = make_world(pm.graph, inputs, req.seed, req.k, pm=pm)
        res = simulate(pm.graph, quorum=req.quorum, faults=req.faults, k=req.k, seed=req.seed,
                       timeouts=_timeouts(req), world=world, stall_verifiers=req.stall_verifiers,
                       late_challenge=req.late_challenge, stall_submitter=req.stall_submitter)
        out = res.to_dict()
        out["model"] = pm.graph.name
        if not req.transcript:
            out.pop("transcript")
        return out

    @app.post("/profile")
    def profile(req: ProfileRequest) -> dict[str, Any]:
        if req.model is None:
            out = ex.corpus_profile()
            models_ = out["models"].values()
        else:
            out = profile_graph(resolve_model(req.model).graph)
            models_ = [out]
        if not req.per_op:
            for p in models_:
                p.pop("per_op", None)
        return out

    @app.post("/sweep-k")
    def sweep(req: SweepKRequest) -> dict[str, Any]:
        rows = ex.sweep_k(req.model, req.ks, req.seed)
        return {"model": req.model, "rows": rows, "trend": ex.build_time_trend(rows)}

    @app.post("/corners")
    def corners(req: CornersRequest) -> dict[str, Any]:
        try:
            kind = BopKind(req.kind)
        except ValueError:
            raise HTTPException(404, f"unknown basic operation {req.kind!r}") from None
        text = export_cases(kind, req.seed)
        return {"kind": kind.value, "cases": text.count("\n"), "text": text}

    @app.post("/consistency", response_model=ConsistencyResponse)
    def consistency(req: ConsistencyRequest) -> ConsistencyResponse:
        results = [SuiteResult(**ex.run_suite(s, req.quick, req.seed)) for s in req.suites]
        return ConsistencyResponse(ok=all(r.ok for r in results), results=results)

    # --- live arbitration -----------------------------------------------------

    def _state(task_id: str) -> GameState:
        arb = app.state.arbitrators.get(task_id)
        if arb is None:
            raise HTTPException(404, f"unknown task {task_id!r}")
        game = arb.games.get(task_id)
        if game is None:
            e = arb.endorsements[task_id][0]
            return GameState(task_id=task_id, phase="Endorsed", seq=0, turn=None, active_verifier=None,
                             failed=[], deadline=None, verdict=None,
                             extra={"p1s_root": _hex(e.p1s_root), "inputs_digest": _hex(e.inputs_digest),
                                    "n_ops": e.n_ops, "quorum": list(e.quorum), "k": e.k})
        snap = game.snapshot()
        deadline = game.window_deadline() if game.turn is None else game.turn_deadline()
        return GameState(task_id=task_id, phase=snap["phase"], seq=snap["seq"], turn=snap["turn"],
                         active_verifier=snap["active_verifier"], failed=snap["failed"], deadline=deadline,
                         verdict=snap["verdict"], extra={"step": snap["step"], "cursor": snap["cursor"]})

    @app.post("/claims", response_model=GameState)
    def open_claim(req: OpenClaimRequest) -> GameState:
        if req.task_id in app.state.arbitrators:
            raise HTTPException(409, f"task {req.task_id!r} already exists")
        pm = resolve_model(req.model, req.k)
        inputs = resolve_inputs(pm.graph, req)
        trace = eval_graph_ops(pm, inputs)
        e = m.Endorsement(req.task_id, pm.graph.name, pm.p1s_tree().root, trace.in_digest, pm.n_ops,
                          len(pm.graph.outputs), tuple(req.quorum), pm.k)
        arb = Arbitrator(_timeouts(req))
        arb.endorse(e, len(pm.sources), tuple(n.id for n in pm.order))
        app.state.arbitrators[req.task_id] = arb
        return _state(req.task_id)

    @app.get("/claims/{task_id}", response_model=GameState)
    def claim_state(task_id: str) -> GameState:
        return _state(task_id)

    @app.post("/claims/{task_id}/messages", response_model=GameState)
    def post_message(task_id: str, req: MessageRequest) -> GameState:
        arb = app.state.arbitrators.get(task_id)
        if arb is None:
            raise HTTPException(404, f"unknown task {task_id!r}")
        try:
            msg = m.message_from_json(req.api, req.payload)
            arb.handle(task_id, req.sender, msg, req.tick)
        except (ProtocolError, TypeError) as exc:
            raise HTTPException(409, str(exc)) from None
        return _state(task_id)

    return app


app = create_app()
