import pytest

from fraudproof.experiments import (
    EXPECTED_CHAIN_ROUNDS, SUITES, SuiteReport, bound_suite, build_time_trend, corpus_profile, fault_sweep,
    malicious_suite, run_suite, sweep_k, trace_memory,
)
from fraudproof.merkle import depth_for


@pytest.mark.parametrize("name", sorted(SUITES))
def test_quick_suites_pass(name):
    res = run_suite(name, quick=True)
    assert res["suite"] == name
    assert res["ok"], res["summary"]
    assert res["seconds"] >= 0


def test_unknown_suite():
    with pytest.raises(KeyError):
        run_suite("nope")


def test_report_counts_mismatches():
    rep = SuiteReport("x", cases={"a": 3})
    assert rep.ok
    for i in range(25):
        rep.miss({"i": i})
    assert not rep.ok and rep.mismatch_count == 25 and len(rep.mismatches) == 20
    assert rep.to_dict()["total"] == 3
    assert not SuiteReport("empty").ok


def test_trend_direction():
    rows = [{"k": k, "tree_build_seconds": s} for k, s in ((2, 3.0), (4, 2.0), (8, 1.0))]
    t = build_time_trend(rows)
    assert t["direction"] == "falling" and t["min_k"] == 8
    assert t["seconds_per_doubling"] == pytest.approx(-1.0)
    rising = build_time_trend([{"k": 2, "tree_build_seconds": 1.0}, {"k": 4, "tree_build_seconds": 2.0}])
    assert rising["direction"] == "rising"


def test_expected_rounds_are_ceil_log():
    assert all(depth_for(1024, k) == r for k, r in EXPECTED_CHAIN_ROUNDS.items())


def test_sweep_k_small_chain():
    rows = sweep_k("chain-100", ks=(2, 10), repeats=3)
    assert [r["rounds_p1"] for r in rows] == [7, 2]
    assert all(r["verdict"] == "rejected" and r["cause"] == "bop-arbitration" for r in rows)


def test_fault_sweep_limit():
    (rep,) = fault_sweep(("mini-mlp",), limit=30)
    assert rep.trials == 30 and rep.ok and rep.live
    assert rep.max_ticks <= rep.bound


def test_malicious_suite_tallies():
    res = malicious_suite(("fig5",), runs=2, strategies=("spurious", "silent"))
    assert res["simulations"] == 4
    assert res["accepted"] == {"fig5": {"spurious": 2, "silent": 2}}
    assert res["over_bound"] == res["inexact_rounds"] == 0


def test_bound_suite_rows():
    rows = bound_suite(("fig5",), quorums=[3])
    assert len(rows) == 10
    assert all(r["within"] and r["correct"] and r["rounds_exact"] for r in rows)


def test_trace_memory_shape():
    res = trace_memory("mini-mlp")
    assert len(res["rows"]) == res["rows"][0]["n_ops"]
    assert res["one_phase_max"] > res["two_phase_max"]


def test_corpus_profile_totals():
    p = corpus_profile(("fig5", "mini-mlp"))
    assert p["total_bops"] == sum(m["bops"] for m in p["models"].values())
    assert p["total_bops_after_dedup"] <= p["total_bops"]
