import pytest
from fastapi.testclient import TestClient

from fraudproof.corpus import fig5_inputs, get_model
from fraudproof.graph import graph_to_document, inputs_to_document
from fraudproof.protocol import messages as m
from fraudproof.protocol.arbitrator import TERMINAL, Arbitrator, Timeouts
from fraudproof.protocol.parties import HonestVerifier, Submitter
from fraudproof.protocol.simulation import FaultSpec, faulty_view, make_world
from fraudproof.service import create_app

FIG5_INPUTS = inputs_to_document(fig5_inputs())


@pytest.fixture(scope="module")
def client():
    with TestClient(create_app()) as c:
        yield c


def test_health_and_models(client):
    assert client.get("/health").json()["status"] == "ok"
    assert "fig5" in client.get("/models").json()["models"]


def test_eval_fig5(client):
    r = client.post("/eval", json={"model": "fig5", "inputs": FIG5_INPUTS})
    assert r.status_code == 200
    body = r.json()
    assert body["outputs"]["Y"]["data"] == [17, 39]
    assert body["digest"].startswith("0x") and len(body["digest"]) == 66


def test_eval_bop_trace(client):
    g = get_model("fig5")
    r = client.post("/eval", json={"model": "fig5", "inputs": FIG5_INPUTS, "trace": "bop",
                                   "node": g.nodes[0].id})
    trace = r.json()["trace"]
    results = [int(t["result"], 16) for t in trace if t["tag"] == "bop"]
    assert results == [5, 12, 15, 24, 17, 39]
    assert client.post("/eval", json={"model": "fig5", "trace": "bop"}).status_code == 400


def test_eval_op_trace_matches_commit(client):
    ev = client.post("/eval", json={"model": "mini-mlp", "trace": "op"}).json()
    cm = client.post("/commit", json={"model": "mini-mlp"}).json()
    assert cm["output_digest"] == ev["digest"]
    assert len(cm["op_leaves"]) == cm["n_ops"] == len(ev["trace"])


def test_eval_threads_agree(client):
    one = client.post("/eval", json={"model": "mini-cnn", "threads": 1}).json()["digest"]
    many = client.post("/eval", json={"model": "mini-cnn", "threads": "max"}).json()["digest"]
    assert one == many


def test_lower_text_and_json(client):
    node = get_model("fig5").nodes[0].id
    text = client.post("/lower", json={"model": "fig5", "node": node}).json()
    assert text["n_vertices"] == 6 and text["text"].splitlines()[0] == "circuit inputs=6 outputs=2 vertices=6"
    vis = client.post("/lower", json={"model": "fig5", "node": node, "format": "json"}).json()["vis"]
    assert [v["tag"] for v in vis] == ["in"] + ["bop"] * 6 + ["out"]


def test_model_document_accepted(client):
    doc = graph_to_document(get_model("fig5"))
    r = client.post("/eval", json={"model": doc, "inputs": FIG5_INPUTS})
    assert r.json()["outputs"]["Y"]["data"] == [17, 39]


def test_dispute_endpoint(client):
    r = client.post("/dispute", json={"model": "fig5", "inputs": FIG5_INPUTS, "faults": ["bop:1:2"],
                                      "transcript": False}).json()
    assert r["verdict"]["cause"] == "bop-arbitration" and r["verdict"]["bop"] == 3
    assert "transcript" not in r


def test_profile_and_corners(client):
    p = client.post("/profile", json={"model": "fig5"}).json()
    assert (p["ops"], p["bops"]) == (1, 6)
    c = client.post("/corners", json={"kind": "f32_add"}).json()
    assert c["cases"] == 7569


def test_consistency_quick(client):
    r = client.post("/consistency", json={"suites": ["op"], "quick": True}).json()
    assert r["ok"] and r["results"][0]["suite"] == "op"


@pytest.mark.parametrize("path, body, status", [
    ("/eval", {"model": "no-such-model"}, 404),
    ("/lower", {"model": "fig5", "node": "ghost"}, 404),
    ("/corners", {"kind": "f64_add"}, 404),
    ("/eval", {"model": {"version": 1, "nodes": "oops"}}, 422),
    ("/eval", {"model": "fig5", "k": 1}, 422),
    ("/dispute", {"model": "fig5", "faults": ["bogus"]}, 400),
    ("/dispute", {"model": "fig5", "t_op": 5}, 422),
])
def test_errors(client, path, body, status):
    assert client.post(path, json=body).status_code == status


def test_invalid_model_lists_diagnostics(client):
    doc = graph_to_document(get_model("fig5"))
    doc["nodes"][0]["inputs"][0] = "ghost"
    r = client.post("/eval", json={"model": doc})
    assert r.status_code == 422 and any("ghost" in d for d in r.json()["diagnostics"])


# --- live arbitration over HTTP ----------------------------------------------

def post(client, task, sender, msg, tick):
    return client.post(f"/claims/{task}/messages",
                       json={"sender": sender, "api": msg.API, "payload": m.to_jsonable(msg), "tick": tick})


def test_live_claim_dispute(client):
    world = make_world("fig5", fig5_inputs())
    view, _ = faulty_view(world, FaultSpec.parse("bop:1:2"))
    sub, ver = Submitter("alice", view), HonestVerifier("bob", world.honest)
    task = "live-1"
    r = client.post("/claims", json={"task_id": task, "quorum": ["alice", "bob"], "model": "fig5",
                                     "inputs": FIG5_INPUTS})
    assert r.json()["phase"] == "Endorsed"
    assert client.post("/claims", json={"task_id": task, "quorum": ["alice", "bob"],
                                        "model": "fig5"}).status_code == 409

    # the parties follow a local mirror of the claim; every move goes over HTTP
    mirror = Arbitrator(Timeouts())
    mirror.endorse(world.endorsement(task, ("alice", "bob")), len(world.pm.sources),
                   tuple(n.id for n in world.pm.order))
    tick = 0

    def send(sender, msg):
        nonlocal tick
        state = post(client, task, sender, msg, tick)
        assert state.status_code == 200, state.text
        mirror.handle(task, sender, msg, tick)
        tick += 1
        return state.json()

    send("alice", m.SubmitClaim(sub.claim(task, "fig5")))
    game = mirror.games[task]
    assert post(client, task, "mallory", m.Challenge(game.seq), tick).status_code == 409
    state = send("bob", m.Challenge(game.seq))
    while game.phase not in TERMINAL:
        actor = sub if game.turn == "submitter" else ver
        state = send(actor.ident, actor.act(game))
        assert state["phase"] == game.phase.value and state["seq"] == game.seq
    assert state["verdict"]["cause"] == "bop-arbitration"
    assert state["verdict"]["bop"] == 3
    assert client.get(f"/claims/{task}").json() == state
    assert post(client, task, "alice", m.Finalize(game.seq), tick).status_code == 409


def test_unknown_claim_and_bad_message(client):
    assert client.get("/claims/nope").status_code == 404
    client.post("/claims", json={"task_id": "bad-msg", "quorum": ["a", "b"], "model": "fig5"})
    r = client.post("/claims/bad-msg/messages", json={"sender": "a", "api": "teleport", "payload": {}, "tick": 0})
    assert r.status_code == 400
