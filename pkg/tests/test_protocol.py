import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fraudproof.corpus import fig5_inputs
from fraudproof.merkle import depth_for
from fraudproof.protocol import arbitrator as arb_mod
from fraudproof.protocol import messages as m
from fraudproof.protocol import simulation as sim
from fraudproof.protocol.arbitrator import (
    ALL_FAILED, BOP_ARBITRATION, INPUT_MISMATCH, NO_CHALLENGE, OUTPUT_MISMATCH, PARTY_TIMEOUT, PATH_FAILURE,
    Arbitrator, Phase, ProtocolError, Timeouts, phase_budget,
)
from fraudproof.protocol.parties import STRATEGIES, HonestVerifier, MaliciousVerifier, Submitter
from fraudproof.protocol.simulation import FaultSpec, faulty_view, make_world, rounds_exact, run_game, simulate

QUORUM = ("submitter", "verifier-1", "verifier-2")


@pytest.fixture(scope="module")
def fig5_world():
    return make_world("fig5", fig5_inputs())


@pytest.fixture(scope="module")
def chain_world():
    return make_world("chain-3", seed=1)


@pytest.fixture(scope="module")
def mlp_world():
    return make_world("mini-mlp", seed=0)


def open_claim(world, timeouts=None, quorum=QUORUM, view=None):
    arb = Arbitrator(timeouts or Timeouts())
    arb.endorse(world.endorsement("t", quorum), len(world.pm.sources), tuple(n.id for n in world.pm.order))
    sub = Submitter("submitter", view or world.honest)
    game = arb.submit("submitter", m.SubmitClaim(sub.claim("t", world.model_id)), 0)
    return arb, sub, game


# --- claim lifecycle ---------------------------------------------------------

def test_valid_claim_awaits_challenge(fig5_world):
    _, _, game = open_claim(fig5_world)
    assert game.phase is Phase.AWAIT_CHALLENGE
    # one operation: window of 2 * 1 + 16 ticks opened at tick 0
    assert game.window_deadline() == 17


def test_second_claim_for_task_is_refused(fig5_world):
    arb, sub, _ = open_claim(fig5_world)
    with pytest.raises(ProtocolError):
        arb.submit("submitter", m.SubmitClaim(sub.claim("t", fig5_world.model_id)), 1)


def test_claim_needs_endorsement(fig5_world):
    arb = Arbitrator()
    sub = Submitter("submitter", fig5_world.honest)
    with pytest.raises(ProtocolError):
        arb.submit("submitter", m.SubmitClaim(sub.claim("t", fig5_world.model_id)), 0)


def test_claim_must_match_endorsement(fig5_world, mlp_world):
    arb = Arbitrator()
    arb.endorse(fig5_world.endorsement("t", QUORUM), len(fig5_world.pm.sources))
    other = Submitter("submitter", mlp_world.honest).claim("t", fig5_world.model_id)
    with pytest.raises(ProtocolError):
        arb.submit("submitter", m.SubmitClaim(other), 0)
    outsider = Submitter("mallory", fig5_world.honest).claim("t", fig5_world.model_id)
    with pytest.raises(ProtocolError):
        arb.submit("mallory", m.SubmitClaim(outsider), 0)


def test_unchallenged_claim_accepted_after_window(fig5_world):
    arb, _, game = open_claim(fig5_world)
    with pytest.raises(ProtocolError):
        arb.handle("t", "submitter", m.Finalize(game.seq), 17)
    assert arb.handle("t", "submitter", m.Finalize(game.seq), 18) is Phase.ACCEPTED
    assert game.verdict.accepted and game.verdict.cause == NO_CHALLENGE and game.verdict.tick == 18
    with pytest.raises(ProtocolError):
        arb.handle("t", "verifier-1", m.Challenge(game.seq), 19)


def test_challenge_after_window_refused(fig5_world):
    arb, _, game = open_claim(fig5_world)
    with pytest.raises(ProtocolError):
        arb.handle("t", "verifier-1", m.Challenge(game.seq), 18)
    assert game.phase is Phase.AWAIT_CHALLENGE


def test_only_quorum_verifiers_challenge(fig5_world):
    arb, _, game = open_claim(fig5_world)
    for who in ("submitter", "mallory"):
        with pytest.raises(ProtocolError):
            arb.handle("t", who, m.Challenge(game.seq), 1)
    assert arb.handle("t", "verifier-1", m.Challenge(game.seq), 1) is Phase.NARROW_P1
    assert game.active_verifier == "verifier-1" and game.turn == "submitter"


def test_out_of_turn_message_refused(fig5_world):
    arb, sub, game = open_claim(fig5_world)
    arb.handle("t", "verifier-1", m.Challenge(game.seq), 1)
    commit = sub.act(game)
    before = game.snapshot()
    for who in ("verifier-1", "verifier-2"):
        with pytest.raises(ProtocolError):
            arb.handle("t", who, commit, 2)
    with pytest.raises(ProtocolError):
        arb.handle("t", "submitter", m.Challenge(game.seq), 2)
    assert game.snapshot() == before
    arb.handle("t", "submitter", commit, 2)
    with pytest.raises(ProtocolError):
        arb.handle("t", "submitter", commit, 3)  # replay of an accepted message


def test_failed_verifier_cannot_challenge_again(fig5_world):
    arb, sub, game = open_claim(fig5_world)
    arb.handle("t", "verifier-1", m.Challenge(game.seq), 1)
    arb.handle("t", "submitter", sub.act(game), 2)
    # verifier-1 stays silent; the submitter claims its timeout
    deadline = game.turn_deadline()
    with pytest.raises(ProtocolError):
        arb.handle("t", "submitter", m.Timeout(game.seq), deadline)
    arb.handle("t", "submitter", m.Timeout(game.seq), deadline + 1)
    assert game.failed == {"verifier-1"}
    assert game.phase is Phase.AWAIT_CHALLENGE
    with pytest.raises(ProtocolError):
        arb.handle("t", "verifier-1", m.Challenge(game.seq), deadline + 2)
    assert arb.handle("t", "verifier-2", m.Challenge(game.seq), deadline + 2) is Phase.NARROW_P1


def test_window_resumes_with_remaining_time(fig5_world):
    arb, sub, game = open_claim(fig5_world, Timeouts(t_v=30))
    arb.handle("t", "verifier-1", m.Challenge(game.seq), 10)
    arb.handle("t", "submitter", sub.act(game), 11)
    end = game.turn_deadline() + 1
    arb.handle("t", "submitter", m.Timeout(game.seq), end)
    # 10 ticks of the window were used before the challenge
    assert game.window_deadline() == end + 20 - 1


def test_clock_budget_formula():
    assert phase_budget(1, 10) == 4
    assert phase_budget(2, 10) == 9
    assert phase_budget(3, 11) == 15
    with pytest.raises(ValueError):
        Timeouts(t_op=9)
    with pytest.raises(ValueError):
        Timeouts(t_bop=3)
    assert Timeouts().window(5) == 26


# --- verdicts per fault family ----------------------------------------------

def test_honest_claim_unchallenged(fig5_world):
    r = simulate("fig5", world=fig5_world)
    assert (r.verdict.outcome, r.verdict.cause, r.verdict.tick) == ("accepted", NO_CHALLENGE, 18)
    assert r.outcomes == []


def test_bop_fault_is_pinpointed(fig5_world):
    r = simulate("fig5", world=fig5_world, faults=["bop:1:2"])
    v = r.verdict
    assert (v.outcome, v.cause, v.op, v.bop) == ("rejected", BOP_ARBITRATION, 1, 3)
    assert v.node_id == fig5_world.pm.node_at(1).id
    assert r.bop_evaluations == 1
    assert r.ticks <= r.bound


@pytest.mark.parametrize("fault, cause, op", [
    ("op-output:2:0", OUTPUT_MISMATCH, 2),
    ("input:2:0", INPUT_MISMATCH, 2),
])
def test_op_level_faults(chain_world, fault, cause, op):
    r = simulate("chain-3", world=chain_world, faults=[fault])
    assert (r.verdict.outcome, r.verdict.cause, r.verdict.op) == ("rejected", cause, op)
    assert r.bop_evaluations == 0


def test_op_output_fault_reaches_second_phase(chain_world):
    r = simulate("chain-3", world=chain_world, faults=["op-output:2:0"])
    (o,) = r.outcomes
    assert o.reached_p1 and o.rounds_p2 > 0
    assert r.verdict.bop == 1


def test_input_fault_stops_in_first_phase(mlp_world):
    r = simulate("mini-mlp", world=mlp_world, faults=["input:3:0"])
    assert (r.verdict.cause, r.verdict.op) == (INPUT_MISMATCH, 3)
    assert r.outcomes[0].rounds_p2 == 0


def test_wrong_children_fail_path_check(fig5_world, mlp_world):
    for world, bop in ((fig5_world, "bop:1:2"), (mlp_world, "bop:3:100")):
        r = simulate(world.model_id, world=world, faults=[bop, "wrong-children:1"])
        assert (r.verdict.outcome, r.verdict.cause) == ("rejected", PATH_FAILURE)


@pytest.mark.parametrize("api", ["commit_p1", "reveal_p2"])
def test_silent_submitter_times_out(fig5_world, api):
    r = simulate("fig5", world=fig5_world, faults=["bop:1:2", f"omit:{api}"])
    assert (r.verdict.outcome, r.verdict.cause) == ("rejected", PARTY_TIMEOUT)
    assert r.ticks <= r.bound


def test_stalling_submitter_still_pinpointed(mlp_world):
    r = simulate("mini-mlp", world=mlp_world, quorum=3, faults=["bop:2:5"], stall_submitter=True)
    assert (r.verdict.cause, r.verdict.op, r.verdict.bop) == (BOP_ARBITRATION, 2, 6)
    assert r.ticks <= r.bound


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_malicious_verifiers_cannot_reject_correct_claim(mlp_world, strategy):
    r = simulate("mini-mlp", world=mlp_world, quorum=4, faults=[f"verifier:{strategy}"], seed=3)
    assert (r.verdict.outcome, r.verdict.cause) == ("accepted", ALL_FAILED)
    assert len(r.outcomes) == 3 and all(o.winner == "submitter" for o in r.outcomes)
    assert r.ticks <= r.bound
    assert rounds_exact(r.outcomes, mlp_world.k)


def test_structure_lie_loses_on_structure(fig5_world):
    r = simulate("fig5", world=fig5_world, faults=["verifier:structure-lie"])
    assert [o.check for o in r.outcomes] == ["structure"]
    assert r.verdict.accepted


def test_stalling_late_verifiers_stay_within_bound(mlp_world):
    r = simulate("mini-mlp", world=mlp_world, quorum=8, faults=["verifier:operand-lie"],
                 stall_verifiers=True, late_challenge=True)
    assert r.verdict.accepted and len(r.outcomes) == 7
    assert r.ticks <= r.bound


def test_one_honest_verifier_among_colluders_suffices(mlp_world):
    r = simulate("mini-mlp", world=mlp_world, quorum=4, faults=["bop:2:5", "verifier:silent:2"])
    assert (r.verdict.outcome, r.verdict.cause, r.verdict.op, r.verdict.bop) == \
        ("rejected", BOP_ARBITRATION, 2, 6)
    assert [o.winner for o in r.outcomes] == ["submitter", "submitter", "verifier"]
    assert r.bop_evaluations == 1


def test_verifiers_served_in_order(mlp_world):
    r = simulate("mini-mlp", world=mlp_world, quorum=4, faults=["verifier:spurious"])
    assert [o.verifier for o in r.outcomes] == ["verifier-1", "verifier-2", "verifier-3"]


# --- narrowing properties ----------------------------------------------------

@given(st.data())
@settings(max_examples=40)
def test_leftmost_divergent_operation_is_found(mlp_world, data):
    w = mlp_world
    p = data.draw(st.integers(1, w.n_ops))
    t = data.draw(st.integers(0, w.n_bops(p) - 1))
    view, masked = faulty_view(w, FaultSpec("bop", str(p), t))
    if masked:
        return
    ours = w.honest.p2(p).p2c.body.levels[0]
    theirs = view.p2(p).p2c.body.levels[0]
    first = next(i for i, (a, b) in enumerate(zip(ours, theirs)) if a != b)
    res = run_game(w, Submitter("submitter", view), [HonestVerifier("verifier-1", w.honest)])
    assert res.verdict.op == p and res.verdict.bop == first + 1 == t + 1
    assert res.bop_evaluations == 1
    assert res.ticks <= res.bound
    (o,) = res.outcomes
    assert o.rounds_p1 == depth_for(w.n_ops, w.k)
    assert o.rounds_p2 == depth_for(w.n_bops(p), w.k)


def test_rounds_shrink_with_arity():
    w = make_world("chain-16", seed=2, k=2)
    r = simulate("chain-16", world=w, faults=["bop:9:0"])
    assert r.verdict.op == 9
    assert r.outcomes[0].rounds_p1 == 4


def test_wide_tree_needs_two_rounds():
    assert depth_for(1024, 32) == 2
    assert depth_for(1024, 2) == 10


# --- replay and transcript fuzzing ------------------------------------------

class _Recording(Arbitrator):
    log: list = []

    def handle(self, task_id, sender, msg, tick):
        phase = super().handle(task_id, sender, msg, tick)
        _Recording.log.append((sender, msg, tick))
        return phase


@pytest.fixture(scope="module")
def recorded(fig5_world):
    """(result, accepted messages) of a three-party game against a faulty submitter."""
    _Recording.log = []
    with pytest.MonkeyPatch.context() as mp:
        mp.setattr(sim, "Arbitrator", _Recording)
        res = simulate("fig5", world=fig5_world, quorum=3, faults=["bop:1:2"])
    return res, list(_Recording.log)


def fresh_arbitrator(world, quorum):
    arb = Arbitrator()
    arb.endorse(world.endorsement("task-0", quorum), len(world.pm.sources), tuple(n.id for n in world.pm.order))
    return arb


def test_recorded_transcript_replays_to_same_verdict(fig5_world, recorded):
    res, log = recorded
    arb = fresh_arbitrator(fig5_world, ("submitter", "verifier-1", "verifier-2"))
    for sender, msg, tick in log:
        arb.handle("task-0", sender, msg, tick)
    assert arb.games["task-0"].verdict == res.verdict


@given(st.data())
@settings(max_examples=60)
def test_injected_messages_never_change_state(fig5_world, recorded, data):
    res, log = recorded
    parties = ["submitter", "verifier-1", "verifier-2", "mallory"]
    arb = fresh_arbitrator(fig5_world, tuple(parties[:3]))
    arb.handle("task-0", *log[0])
    game = arb.games["task-0"]
    for i, (sender, msg, tick) in enumerate(log[1:], start=1):
        for _ in range(data.draw(st.integers(0, 2))):
            old_sender, old, _ = log[data.draw(st.integers(0, i - 1))]
            who = data.draw(st.sampled_from([old_sender] + parties))
            before = game.snapshot()
            with pytest.raises(ProtocolError):
                arb.handle("task-0", who, old, tick)
            assert game.snapshot() == before
        arb.handle("task-0", sender, msg, tick)
    assert game.verdict == res.verdict


def test_stale_and_future_seq_refused(fig5_world):
    arb, _, game = open_claim(fig5_world)
    before = game.snapshot()
    for seq in (game.seq - 1, game.seq + 1):
        with pytest.raises(ProtocolError):
            arb.handle("t", "verifier-1", m.Challenge(seq), 1)
    assert game.snapshot() == before


def test_ticks_cannot_go_backwards(fig5_world):
    arb, sub, game = open_claim(fig5_world)
    arb.handle("t", "verifier-1", m.Challenge(game.seq), 5)
    with pytest.raises(ProtocolError):
        arb.handle("t", "submitter", sub.act(game), 4)


def test_messages_survive_json(recorded):
    _, log = recorded
    apis = set()
    for _, msg, _ in log:
        back = m.message_from_json(msg.API, m.to_jsonable(msg))
        assert back == msg and back.digest() == msg.digest()
        apis.add(msg.API)
    assert {"submit_claim", "challenge", "commit_p1", "reveal_p2"} <= apis


def test_unknown_api_rejected():
    with pytest.raises(ValueError):
        m.message_from_json("teleport", {})
    with pytest.raises(ValueError):
        m.message_from_json("challenge", {})


def test_fault_spec_parsing():
    assert FaultSpec.parse("bop:2:5:0x3f800000") == FaultSpec("bop", "2", 5, 0x3F800000, "bop:2:5:0x3f800000")
    assert FaultSpec.parse("verifier:silent:2").count == 2
    for bad in ("bop:1", "omit:nothing", "verifier:lazy", "wrong-children:x", "gibberish"):
        with pytest.raises(ValueError):
            FaultSpec.parse(bad)


def test_malicious_strategy_validated():
    with pytest.raises(ValueError):
        MaliciousVerifier("v", "lazy")


def test_result_dict_has_verdict(fig5_world):
    d = simulate("fig5", world=fig5_world, faults=["bop:1:2"]).to_dict()
    assert d["verdict"]["cause"] == BOP_ARBITRATION
    assert d["messages"] == len([r for r in d["transcript"] if r["accepted"]])
    assert arb_mod.TERMINAL == (Phase.ACCEPTED, Phase.REJECTED)
