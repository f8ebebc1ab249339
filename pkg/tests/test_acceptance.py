"""One pass/fail test per acceptance criterion, at full size."""

import time

import pytest

from fraudproof.circuit import lower_op, node_input_meta
from fraudproof.commit import PreparedModel
from fraudproof.corpus import MODELS, fig5, fig5_inputs
from fraudproof.evaluators import eval_graph_native, eval_op_circuit
from fraudproof.experiments import (
    EXPECTED_CHAIN_ROUNDS, F32_BINARY, bop_suite, bound_suite, build_time_trend, fault_sweep, malicious_suite,
    native_suite, op_suite, sweep_k, trace_memory,
)
from fraudproof.graph import SUPPORTED_KINDS
from fraudproof.numerics.bops import BopKind
from fraudproof.protocol.parties import STRATEGIES

pytestmark = pytest.mark.slow


class Clock:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


@pytest.fixture(scope="module")
def protocol_runs():
    """Fault sweep and malicious-verifier runs, shared by the correctness and liveness criteria."""
    with Clock() as clock:
        faults = fault_sweep(("fig5", "mini-mlp"))
        malicious = malicious_suite(("fig5", "mini-mlp"), runs=100)
    return faults, malicious, clock.seconds


def test_1_fig5_ground_truth():
    with Clock() as clock:
        g = fig5()
        node = g.nodes[0]
        c = lower_op(node, node_input_meta(g, node))
        pm = PreparedModel(g)
        values = fig5_inputs()
        bt = eval_op_circuit(pm, 1, [values["A"], values["B"]], "emulated")
    results = [vi.result.payload for vi in bt if vi.tag == "bop"]
    assert c.n_vertices == 6
    assert results[:4] == [5, 12, 15, 24]
    assert results[4:] == [17, 39]
    assert [v.payload for v in bt.vi(len(bt) - 1).values] == [17, 39]
    assert eval_graph_native(pm, values).outputs["Y"].payloads() == [17, 39]
    assert clock.seconds < 1.0


def test_2_bop_paths_bit_equal():
    with Clock() as clock:
        rep = bop_suite(10**6)
    assert rep.ok, rep.mismatches[:3]
    assert rep.mismatch_count == 0
    for kind in F32_BINARY:
        assert rep.corner_cases[kind] >= 7500
    assert set(rep.cases) == {k.value for k in BopKind}
    assert rep.total - sum(rep.corner_cases.values()) >= 10**6
    assert clock.seconds < 120


def test_3_op_kernels_match_circuits():
    with Clock() as clock:
        rep = op_suite(20, 1000)
    assert rep.ok, rep.mismatches[:3]
    assert set(rep.cases) == set(SUPPORTED_KINDS)
    for kind in SUPPORTED_KINDS:
        assert rep.corner_cases[kind] >= 20
        assert rep.cases[kind] - rep.corner_cases[kind] >= 1000
    assert clock.seconds < 300


def test_4_native_matches_operation_trace():
    with Clock() as clock:
        rep = native_suite(threads=(1, 2, "max"), batches=100)
    assert rep.ok, rep.mismatches[:3]
    assert set(rep.cases) == set(MODELS)
    assert all(n == 300 for n in rep.cases.values())
    assert clock.seconds < 300


def test_5_disputes_are_correct(protocol_runs):
    faults, malicious, seconds = protocol_runs
    assert sum(r.trials for r in faults) >= 10**4
    for rep in faults:
        assert rep.ok, rep.failures[:3]
        assert rep.pinpointed == rep.trials - rep.masked
    for model, per in malicious["accepted"].items():
        assert set(per) == set(STRATEGIES)
        assert all(n == 100 for n in per.values()), (model, per)
    assert seconds < 600


def test_6_disputes_finish_within_bound(protocol_runs):
    faults, malicious, _ = protocol_runs
    for rep in faults:
        assert rep.over_bound == 0 and rep.inexact_rounds == 0
        assert rep.max_ticks <= rep.bound
    assert malicious["over_bound"] == 0 and malicious["inexact_rounds"] == 0
    rows = bound_suite(quorums=range(2, 9))
    assert {r["quorum"] for r in rows} == set(range(2, 9))
    bad = [r for r in rows if not (r["within"] and r["correct"] and r["rounds_exact"])]
    assert bad == []


def test_7_rounds_shrink_with_arity():
    with Clock() as clock:
        rows = sweep_k("chain-1024", ks=(2, 4, 8, 16, 32, 64))
    assert all(r["n_ops"] == 1024 for r in rows)
    assert tuple(r["rounds_p1"] for r in rows) == (10, 5, 4, 3, 2, 2)
    assert all(r["rounds_p1"] == EXPECTED_CHAIN_ROUNDS[r["k"]] for r in rows)
    assert all(r["verdict"] == "rejected" for r in rows)
    trend = build_time_trend(rows)
    assert trend["direction"] == "falling", trend
    assert clock.seconds < 120


def test_8_two_phase_memory():
    with Clock() as clock:
        res = trace_memory("mini-cnn")
    rows = [r for r in res["rows"] if not r["masked"]]
    assert rows
    for r in rows:
        assert r["two_phase_peak"] <= r["two_phase_bound"]
        assert r["one_phase_peak"] > r["two_phase_peak"]
    assert res["one_phase_max"] > res["two_phase_max"]
    assert clock.seconds < 300
