"""Consistency suites and protocol experiments shared by the CLI, the service and the tests."""

from __future__ import annotations

import gc
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .circuit import DedupCache, profile_graph
from .commit import PreparedModel
from .corpus import MODELS, get_model, random_inputs
from .dtypes import DType
from .evaluators import circuit_inputs, eval_circuit, eval_graph_native, eval_graph_ops
from .graph import SUPPORTED_KINDS, CAST_KINDS, OpNode, Tensor
from .kernels import run_kernel
from .merkle import P1C, build_tree, depth_for
from .numerics.bops import BopKind, RawFn, raw_fn, result_dtype
from .numerics.corners import _I32_SPECIALS, gen_corner_cases, iter_random_suite, special_pool
from .protocol.arbitrator import Timeouts
from .protocol.parties import STRATEGIES, HonestVerifier, MaliciousVerifier, Submitter
from .protocol.simulation import (
    FaultSpec, SweepReport, World, bop_fault_sweep, faulty_view, make_world, malicious_runs, rounds_exact,
    memory_experiment, run_game, simulate, tick_bound,
)

F32, I32, U8 = DType.F32, DType.I32, DType.U8
MAX_REPORTED = 20


@dataclass
class SuiteReport:
    name: str
    cases: dict[str, int] = field(default_factory=dict)
    corner_cases: dict[str, int] = field(default_factory=dict)
    mismatch_count: int = 0
    mismatches: list[dict] = field(default_factory=list)
    seconds: float = 0.0
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return bool(self.cases) and self.mismatch_count == 0

    @property
    def total(self) -> int:
        return sum(self.cases.values())

    def miss(self, record: dict) -> None:
        self.mismatch_count += 1
        if len(self.mismatches) < MAX_REPORTED:
            self.mismatches.append(record)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ok"] = self.ok
        d["total"] = self.total
        return d


# ---------------------------------------------------------------------------
# basic operations: host path against the integer-only path

def bop_suite(n_random: int = 10**6, seed: int = 1, kinds: Iterable[BopKind] | None = None,
              override: Mapping[BopKind, RawFn] | None = None) -> SuiteReport:
    """Every corner case plus ``n_random`` random tuples, reference vs emulated.

    ``override`` swaps reference functions, which is how the tests plant bugs.
    """
    rep = SuiteReport("bop")
    wanted = set(kinds) if kinds is not None else set(BopKind)
    override = dict(override or {})
    start = time.perf_counter()

    def check(kind: BopKind, ops, corner: bool) -> None:
        dt = result_dtype(kind, [o.dtype for o in ops])
        payloads = [o.payload for o in ops]
        ref = override.get(kind, raw_fn(kind, dt, "reference"))(*payloads)
        emu = raw_fn(kind, dt, "emulated")(*payloads)
        if ref != emu:
            rep.miss({"kind": kind.value, "operands": [f"0x{o.word:08x}" for o in ops],
                      "reference": ref, "emulated": emu, "corner": corner})

    for kind in BopKind:
        if kind not in wanted:
            continue
        corners = gen_corner_cases(kind)
        for ops in corners:
            check(kind, ops, True)
        rep.corner_cases[kind.value] = len(corners)
        rep.cases[kind.value] = len(corners)
    for kind, ops in iter_random_suite(n_random, seed):
        if kind in wanted:
            check(kind, ops, False)
            rep.cases[kind.value] = rep.cases.get(kind.value, 0) + 1
    rep.seconds = time.perf_counter() - start
    rep.extra["random"] = n_random
    return rep


# ---------------------------------------------------------------------------
# operations: kernels against their lowered circuits

_POOL = np.array(special_pool(), dtype=np.uint32)
_I32_POOL = np.array(_I32_SPECIALS, dtype=np.int64).astype(np.int32)
_U8_POOL = np.array([0, 1, 2, 127, 128, 129, 254, 255], dtype=np.uint8)


def _f32(rng: np.random.Generator, shape: tuple[int, ...], corner: bool) -> Tensor:
    n = math.prod(shape)
    if corner:
        bits = rng.choice(_POOL, n)
    else:
        scale = 10.0 ** rng.uniform(-3, 3)
        bits = (rng.standard_normal(n) * scale).astype(np.float32).view(np.uint32)
        odd = rng.random(n)
        bits = np.where(odd < 0.05, rng.choice(_POOL, n), bits)
        bits = np.where(odd > 0.95, rng.integers(0, 2**32, n, dtype=np.uint64).astype(np.uint32), bits)
    return Tensor(F32, shape, np.asarray(bits, dtype=np.uint32).view(np.float32))


def _i32(rng: np.random.Generator, shape: tuple[int, ...], corner: bool) -> Tensor:
    n = math.prod(shape)
    if corner:
        data = rng.choice(_I32_POOL, n)
    elif rng.random() < 0.5:
        data = rng.integers(-1000, 1000, n)
    else:
        data = rng.integers(-(2**31), 2**31, n, dtype=np.int64)
    return Tensor(I32, shape, np.asarray(data, dtype=np.int64).astype(np.int32))


def _u8(rng: np.random.Generator, shape: tuple[int, ...], corner: bool) -> Tensor:
    n = math.prod(shape)
    data = rng.choice(_U8_POOL, n) if corner else rng.integers(0, 256, n)
    return Tensor(U8, shape, np.asarray(data, dtype=np.uint8))


_MAKERS = {F32: _f32, I32: _i32, U8: _u8}


def _tensor(rng, dtype: DType, shape, corner: bool) -> Tensor:
    return _MAKERS[dtype](rng, tuple(int(s) for s in shape), corner)


def _shape(rng, lo: int, hi: int, dim: int = 4) -> tuple[int, ...]:
    return tuple(int(d) for d in rng.integers(1, dim + 1, int(rng.integers(lo, hi + 1))))


def _pick(rng, options: Sequence):
    return options[int(rng.integers(len(options)))]


_ATTR_FLOATS = [0.0, -0.0, 1.0, -1.5, 2.5, 1e-5, float("inf"), float("-inf"), float("nan"), 3e38]

Instance = tuple[OpNode, list[Tensor]]


def _node(kind: str, n_inputs: int, **attrs) -> OpNode:
    return OpNode("op", kind, [f"x{i}" for i in range(n_inputs)], ["y"], attrs)


def _gen_elementwise(kind: str, dtypes: tuple[DType, ...]):
    def gen(rng, corner: bool) -> Instance:
        dt = _pick(rng, dtypes)
        a = _shape(rng, 0, 3)
        r = int(rng.integers(0, len(a) + 1))
        b = tuple(d if rng.random() < 0.5 else 1 for d in a[len(a) - r:])
        return _node(kind, 2), [_tensor(rng, dt, a, corner), _tensor(rng, dt, b, corner)]
    return gen


def _gen_relu(rng, corner: bool) -> Instance:
    return _node("Relu", 1), [_f32(rng, _shape(rng, 0, 3), corner)]


def _gen_clip(rng, corner: bool) -> Instance:
    attrs = {}
    for key in ("min", "max"):
        u = rng.random()
        if u < 0.2:
            continue
        attrs[key] = _pick(rng, _ATTR_FLOATS) if corner or u < 0.4 else float(rng.normal() * 3)
    return _node("Clip", 1, **attrs), [_f32(rng, _shape(rng, 0, 3), corner)]


def _gen_pool(kind: str):
    def gen(rng, corner: bool) -> Instance:
        n, c, h, w = int(rng.integers(1, 3)), int(rng.integers(1, 3)), int(rng.integers(1, 6)), int(rng.integers(1, 6))
        kh, kw = int(rng.integers(1, h + 1)), int(rng.integers(1, w + 1))
        strides = [int(rng.integers(1, 3)), int(rng.integers(1, 3))]
        node = _node(kind, 1, kernel_shape=[kh, kw], strides=strides)
        return node, [_f32(rng, (n, c, h, w), corner)]
    return gen


def _gen_reduce(kind: str, dtypes: tuple[DType, ...]):
    def gen(rng, corner: bool) -> Instance:
        shape = _shape(rng, 1, 3)
        rank = len(shape)
        attrs: dict[str, Any] = {"keepdims": int(rng.integers(0, 2))}
        if rng.random() < 0.7:
            k = int(rng.integers(1, rank + 1))
            axes = [int(a) for a in rng.permutation(rank)[:k]]
            attrs["axes"] = [a - rank if rng.random() < 0.3 else a for a in axes]
        return _node(kind, 1, **attrs), [_tensor(rng, _pick(rng, dtypes), shape, corner)]
    return gen


def _gen_matmul(rng, corner: bool) -> Instance:
    k, n = int(rng.integers(1, 5)), int(rng.integers(1, 4))
    lead = _shape(rng, 1, 2, 3)
    return _node("MatMul", 2), [_f32(rng, lead + (k,), corner), _f32(rng, (k, n), corner)]


def _gen_gemm(rng, corner: bool) -> Instance:
    m, k, n = (int(x) for x in rng.integers(1, 4, 3))
    ta, tb = int(rng.integers(0, 2)), int(rng.integers(0, 2))
    attrs: dict[str, Any] = {"transA": ta, "transB": tb}
    for key in ("alpha", "beta"):
        if rng.random() < 0.6:
            attrs[key] = _pick(rng, _ATTR_FLOATS) if corner else float(rng.normal())
    ins = [_f32(rng, (k, m) if ta else (m, k), corner), _f32(rng, (n, k) if tb else (k, n), corner)]
    if rng.random() < 0.8:
        c_shape = _pick(rng, [(m, n), (n,), (1, n), (m, 1), (), (1,)])
        ins.append(_f32(rng, c_shape, corner))
    return _node("Gemm", len(ins), **attrs), ins


def _zero_points(rng, dtypes: Sequence[DType], corner: bool) -> list[Tensor]:
    count = int(rng.integers(0, len(dtypes) + 1))
    return [_tensor(rng, dt, _pick(rng, [(), (1,)]), corner) for dt in dtypes[:count]]


def _gen_matmul_integer(rng, corner: bool) -> Instance:
    da, db = _pick(rng, (U8, I32)), _pick(rng, (U8, I32))
    m, k, n = (int(x) for x in rng.integers(1, 5, 3))
    ins = [_tensor(rng, da, (m, k), corner), _tensor(rng, db, (k, n), corner)]
    ins += _zero_points(rng, (da, db), corner)
    return _node("MatMulInteger", len(ins)), ins


def _gen_conv_integer(rng, corner: bool) -> Instance:
    dx, dw = _pick(rng, (U8, I32)), _pick(rng, (U8, I32))
    n, c, m = int(rng.integers(1, 3)), int(rng.integers(1, 3)), int(rng.integers(1, 3))
    h, w = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    pads = [int(p) for p in rng.integers(0, 2, 4)]
    kh = int(rng.integers(1, min(3, h + pads[0] + pads[2]) + 1))
    kw = int(rng.integers(1, min(3, w + pads[1] + pads[3]) + 1))
    strides = [int(rng.integers(1, 3)), int(rng.integers(1, 3))]
    ins = [_tensor(rng, dx, (n, c, h, w), corner), _tensor(rng, dw, (m, c, kh, kw), corner)]
    ins += _zero_points(rng, (dx, dw), corner)
    return _node("ConvInteger", len(ins), pads=pads, strides=strides), ins


def _gen_batchnorm(rng, corner: bool) -> Instance:
    shape = (int(rng.integers(1, 3)), int(rng.integers(1, 4))) + _shape(rng, 0, 2, 3)
    c = shape[1]
    var = _f32(rng, (c,), corner)
    if not corner:
        var = Tensor(F32, (c,), np.abs(rng.standard_normal(c)).astype(np.float32))
    params = [_f32(rng, (c,), corner), _f32(rng, (c,), corner), _f32(rng, (c,), corner), var]
    eps = _pick(rng, [1e-5, 0.0, 1e-3, -1.0, float("nan")]) if corner else _pick(rng, [1e-5, 1e-3])
    return _node("BatchNormalization", 5, epsilon=eps), [_f32(rng, shape, corner)] + params


_CASTS = sorted(CAST_KINDS, key=lambda p: (p[0].value, p[1].value)) + [(F32, F32), (I32, I32), (U8, U8)]


def _gen_cast(rng, corner: bool) -> Instance:
    src, dst = _pick(rng, _CASTS)
    return _node("Cast", 1, to=dst.value), [_tensor(rng, src, _shape(rng, 0, 3), corner)]


def _scale(rng, corner: bool) -> Tensor:
    shape = _pick(rng, [(), (1,)])
    if corner:
        return _f32(rng, shape, True)
    return Tensor(F32, shape, np.array([10.0 ** rng.uniform(-4, 1)], dtype=np.float32))


def _gen_quantize(rng, corner: bool) -> Instance:
    ins = [_f32(rng, _shape(rng, 0, 3), corner), _scale(rng, corner)]
    if rng.random() < 0.7:
        ins.append(_u8(rng, _pick(rng, [(), (1,)]), corner))
    return _node("QuantizeLinear", len(ins)), ins


def _gen_dequantize(rng, corner: bool) -> Instance:
    dt = _pick(rng, (U8, I32))
    ins = [_tensor(rng, dt, _shape(rng, 0, 3), corner), _scale(rng, corner)]
    if rng.random() < 0.7:
        ins.append(_tensor(rng, dt, _pick(rng, [(), (1,)]), corner))
    return _node("DequantizeLinear", len(ins)), ins


_FI = (F32, I32)
GENERATORS: dict[str, Callable[[np.random.Generator, bool], Instance]] = {
    "Add": _gen_elementwise("Add", _FI),
    "Sub": _gen_elementwise("Sub", _FI),
    "Mul": _gen_elementwise("Mul", _FI),
    "Div": _gen_elementwise("Div", (F32,)),
    "Min": _gen_elementwise("Min", (F32,)),
    "Max": _gen_elementwise("Max", (F32,)),
    "Relu": _gen_relu,
    "Clip": _gen_clip,
    "MaxPool": _gen_pool("MaxPool"),
    "AveragePool": _gen_pool("AveragePool"),
    "ReduceSum": _gen_reduce("ReduceSum", _FI),
    "ReduceMax": _gen_reduce("ReduceMax", (F32,)),
    "MatMul": _gen_matmul,
    "Gemm": _gen_gemm,
    "MatMulInteger": _gen_matmul_integer,
    "ConvInteger": _gen_conv_integer,
    "BatchNormalization": _gen_batchnorm,
    "Cast": _gen_cast,
    "QuantizeLinear": _gen_quantize,
    "DequantizeLinear": _gen_dequantize,
}
assert set(GENERATORS) == set(SUPPORTED_KINDS)


def op_instances(kind: str, n_corner: int, n_random: int, seed: int = 0):
    """Yields (corner, node, tensors); deterministic in ``seed``."""
    rng = np.random.default_rng([seed, SUPPORTED_KINDS.index(kind)])
    gen = GENERATORS[kind]
    for i in range(n_corner + n_random):
        corner = i < n_corner
        node, tensors = gen(rng, corner)
        yield corner, node, tensors


def check_op_instance(node: OpNode, tensors: Sequence[Tensor], cache: DedupCache | None = None) -> tuple[bool, Tensor, Tensor]:
    """(equal, kernel output, circuit output) for one operation instance."""
    metas = [t.meta for t in tensors]
    c = cache.get(node, metas) if cache is not None else DedupCache().get(node, metas)
    native = run_kernel(node, list(tensors))
    lowered = eval_circuit(c, circuit_inputs(tensors)).output_tensor()
    return native.bit_equal(lowered), native, lowered


def op_suite(n_corner: int = 20, n_random: int = 1000, seed: int = 0,
             kinds: Iterable[str] | None = None) -> SuiteReport:
    rep = SuiteReport("op")
    cache = DedupCache()
    start = time.perf_counter()
    for kind in kinds or SUPPORTED_KINDS:
        rep.cases[kind] = 0
        rep.corner_cases[kind] = 0
        for corner, node, tensors in op_instances(kind, n_corner, n_random, seed):
            equal, native, lowered = check_op_instance(node, tensors, cache)
            rep.cases[kind] += 1
            rep.corner_cases[kind] += int(corner)
            if not equal:
                attrs = {a: repr(v) if isinstance(v, float) else v for a, v in node.attributes.items()}
                rep.miss({"kind": kind, "attributes": attrs, "corner": corner,
                          "inputs": [[t.dtype.value, list(t.shape), t.words()] for t in tensors],
                          "kernel": native.words(), "circuit": lowered.words()})
    rep.seconds = time.perf_counter() - start
    rep.extra["unique_circuits"] = len(cache)
    return rep


# ---------------------------------------------------------------------------
# graphs: native multi-threaded against the operation-level trace

def native_suite(models: Iterable[str] | None = None, threads: Sequence[int | str] = (1, 2, "max"),
                 batches: int = 100, seed: int = 0, k: int = 32) -> SuiteReport:
    rep = SuiteReport("native")
    start = time.perf_counter()
    for name in models or MODELS:
        g = get_model(name)
        pm = PreparedModel(g, k)
        rep.cases[name] = 0
        for b in range(batches):
            inputs = random_inputs(g, seed + b)
            want = eval_graph_ops(pm, inputs).out_digest
            for t in threads:
                got = eval_graph_native(pm, inputs, t).digest
                rep.cases[name] += 1
                if got != want:
                    rep.miss({"model": name, "batch": seed + b, "threads": t,
                              "native": got.hex(), "ops": want.hex()})
    rep.seconds = time.perf_counter() - start
    rep.extra["threads"] = [str(t) for t in threads]
    return rep


# ---------------------------------------------------------------------------
# protocol experiments

def corpus_profile(models: Iterable[str] | None = None) -> dict[str, Any]:
    cache = DedupCache()
    per_model = {name: profile_graph(get_model(name), cache) for name in (models or MODELS)}
    return {"models": per_model,
            "total_bops": sum(p["bops"] for p in per_model.values()),
            "total_bops_after_dedup": sum(p["bops_after_dedup"] for p in per_model.values())}


def _median_seconds(fn: Callable[[], Any], repeats: int) -> float:
    times = []
    gc.collect()
    gc.disable()
    try:
        for _ in range(repeats):
            start = time.perf_counter()
            fn()
            times.append(time.perf_counter() - start)
    finally:
        gc.enable()
    return float(np.median(times))


def sweep_k(model: str = "chain-1024", ks: Sequence[int] = (2, 4, 8, 16, 32, 64), seed: int = 0,
            position: int | None = None, repeats: int = 31) -> list[dict]:
    """Phase-one rounds and tree build time for each arity.

    A basic-operation fault in one operation forces a dispute whose first
    phase narrows over every operation of the model. ``tree_build_seconds``
    is the median time to build the operation-trace tree from its leaves;
    ``commit_seconds`` also covers the per-operation subtrees.
    """
    g = get_model(model)
    rows = []
    for k in ks:
        pm = PreparedModel(g, k)
        world = make_world(g, seed=seed, k=k, pm=pm)
        start = time.perf_counter()
        pm.p1s_tree()
        leaves = [world.honest.op_leaf(q) for q in range(1, world.n_ops + 1)]
        world.honest.p1c
        commit = time.perf_counter() - start
        build = _median_seconds(lambda: build_tree(leaves, k, P1C), repeats)
        p = position or max(2, world.n_ops // 2)
        res = simulate(g, world=world, quorum=2, faults=[FaultSpec("bop", str(p), 0, text=f"bop:{p}:0")])
        outcome = res.outcomes[-1] if res.outcomes else None
        rows.append({
            "k": k, "n_ops": world.n_ops, "depth": depth_for(world.n_ops, k),
            "rounds_p1": outcome.rounds_p1 if outcome else 0,
            "rounds_p2": outcome.rounds_p2 if outcome else 0,
            "verdict": res.verdict.outcome, "cause": res.verdict.cause,
            "ticks": res.ticks, "bytes": res.bytes_sent, "tree_build_seconds": build,
            "commit_seconds": commit,
        })
    return rows


def fault_sweep(models: Sequence[str] = ("fig5", "mini-mlp"), seed: int = 0, k: int = 32,
                limit: int | None = None) -> list[SweepReport]:
    return [bop_fault_sweep(make_world(name, seed=seed, k=k), limit=limit) for name in models]


def malicious_suite(models: Sequence[str] = ("fig5", "mini-mlp"), runs: int = 100, quorum: int = 3,
                    seed: int = 0, strategies: Sequence[str] = STRATEGIES) -> dict[str, Any]:
    """Accepted-run counts per model and strategy with an honest submitter, plus liveness tallies."""
    accepted: dict[str, dict[str, int]] = {}
    over_bound = inexact = total = 0
    for name in models:
        world = make_world(name, seed=seed)
        accepted[name] = {}
        for s in strategies:
            results = malicious_runs(world, s, runs, quorum, seed)
            accepted[name][s] = sum(r.verdict.accepted for r in results)
            total += len(results)
            over_bound += sum(r.ticks > r.bound for r in results)
            inexact += sum(not rounds_exact(r.outcomes, world.k) for r in results)
    return {"runs": runs, "accepted": accepted, "simulations": total, "over_bound": over_bound,
            "inexact_rounds": inexact}


def bound_suite(models: Sequence[str] = ("fig5", "mini-mlp", "mini-cnn"), quorums: Iterable[int] = range(2, 9),
                seed: int = 0, k: int = 32, timeouts: Timeouts | None = None) -> list[dict]:
    """Worst-case tick counts against T^v + m (d_op T^op + d_bop T^bop).

    Two cases per (model, m): an honest submitter facing m - 1 stalling,
    late malicious verifiers, and a faulty submitter whose only honest
    verifier is served last behind m - 2 stalling malicious ones.
    """
    timeouts = timeouts or Timeouts()
    rows = []
    for name in models:
        world = make_world(name, seed=seed, k=k)
        fault = _first_effective_fault(world)
        for m_ in quorums:
            for strategy in STRATEGIES:
                cases = [("honest-submitter", world.honest, m_ - 1)]
                if fault is not None:
                    cases.append(("faulty-submitter", fault, m_ - 2))
                for label, view, n_bad in cases:
                    sub = Submitter("submitter", view, delay="stall")
                    verifiers = [MaliciousVerifier(f"verifier-{i}", strategy, seed * 1000 + i, "stall", True)
                                 for i in range(1, n_bad + 1)]
                    verifiers += [HonestVerifier(f"verifier-{i}", world.honest, "stall", True)
                                  for i in range(n_bad + 1, m_)]
                    res = run_game(world, sub, verifiers, timeouts)
                    bound = tick_bound(world, m_, timeouts)
                    expect_accept = label == "honest-submitter"
                    rows.append({
                        "model": name, "quorum": m_, "strategy": strategy, "case": label,
                        "ticks": res.ticks, "bound": bound, "within": res.ticks <= bound,
                        "verdict": res.verdict.outcome, "cause": res.verdict.cause,
                        "correct": res.verdict.accepted == expect_accept,
                        "rounds_exact": rounds_exact(res.outcomes, k),
                    })
    return rows


def _first_effective_fault(world: World):
    c = world.honest.p2(world.n_ops).circuit
    view, masked = faulty_view(world, FaultSpec("bop", str(world.n_ops), c.n_vertices - 1))
    return None if masked else view


def trace_memory(model: str = "mini-cnn", seed: int = 0, k: int = 32) -> dict[str, Any]:
    rows = memory_experiment(model, seed, k)
    n1 = rows[0]["n_ops"] if rows else 0
    for r in rows:
        r["two_phase_bound"] = 2 * (n1 + 2) + 2 * (r["n_bops"] + 2)
    return {"model": model, "rows": rows,
            "two_phase_max": max(r["two_phase_peak"] for r in rows),
            "one_phase_max": max(r["one_phase_peak"] for r in rows)}


# ---------------------------------------------------------------------------
# named suites with pass/fail, as run by ``consistency``

EXPECTED_CHAIN_ROUNDS = {2: 10, 4: 5, 8: 4, 16: 3, 32: 2, 64: 2}
F32_BINARY = ("f32_add", "f32_sub", "f32_mul", "f32_div", "f32_min", "f32_max")


def build_time_trend(rows: Sequence[dict]) -> dict[str, Any]:
    """Least-squares slope of tree-build seconds against log2 k."""
    xs = np.log2([r["k"] for r in rows])
    ys = np.array([r["tree_build_seconds"] for r in rows])
    slope = float(np.polyfit(xs, ys, 1)[0]) if len(rows) > 1 else 0.0
    return {"seconds_per_doubling": slope,
            "direction": "rising" if slope > 0 else "falling" if slope < 0 else "flat",
            "min_k": int(rows[int(np.argmin(ys))]["k"]) if rows else None}


def _suite_bop(quick: bool, seed: int) -> tuple[bool, dict]:
    n = 10**4 if quick else 10**6
    rep = bop_suite(n, seed + 1)
    corners_ok = all(rep.corner_cases[k] >= 7500 for k in F32_BINARY)
    return rep.ok and corners_ok, rep.to_dict()


def _suite_op(quick: bool, seed: int) -> tuple[bool, dict]:
    rep = op_suite(20, 50 if quick else 1000, seed)
    enough = all(rep.corner_cases[k] >= 20 and rep.cases[k] - rep.corner_cases[k] >= (50 if quick else 1000)
                 for k in SUPPORTED_KINDS)
    return rep.ok and enough, rep.to_dict()


def _suite_native(quick: bool, seed: int) -> tuple[bool, dict]:
    rep = native_suite(batches=3 if quick else 100, seed=seed)
    return rep.ok, rep.to_dict()


def _suite_faults(quick: bool, seed: int) -> tuple[bool, dict]:
    reps = fault_sweep(seed=seed, limit=200 if quick else None)
    trials = sum(r.trials for r in reps)
    summary = {"trials": trials, "reports": [asdict(r) | {"ok": r.ok, "live": r.live} for r in reps]}
    return all(r.ok and r.live for r in reps) and (quick or trials >= 10**4), summary


def _suite_malicious(quick: bool, seed: int) -> tuple[bool, dict]:
    runs = 5 if quick else 100
    res = malicious_suite(runs=runs, seed=seed)
    ok = all(v == runs for per in res["accepted"].values() for v in per.values())
    return ok and res["over_bound"] == 0 and res["inexact_rounds"] == 0, res


def _suite_bounds(quick: bool, seed: int) -> tuple[bool, dict]:
    rows = bound_suite(quorums=range(2, 5) if quick else range(2, 9), seed=seed)
    ok = all(r["within"] and r["correct"] and r["rounds_exact"] for r in rows)
    worst = max(rows, key=lambda r: r["ticks"] / r["bound"])
    return ok, {"runs": len(rows), "worst": worst, "failures": [r for r in rows if not
                                                                (r["within"] and r["correct"] and r["rounds_exact"])]}


def _suite_memory(quick: bool, seed: int) -> tuple[bool, dict]:
    res = trace_memory(seed=seed)
    ok = all(r["two_phase_peak"] <= r["two_phase_bound"] for r in res["rows"] if not r["masked"])
    ok = ok and res["one_phase_max"] > res["two_phase_max"]
    return ok, res


def _suite_rounds(quick: bool, seed: int) -> tuple[bool, dict]:
    rows = sweep_k(seed=seed)
    ok = all(r["rounds_p1"] == EXPECTED_CHAIN_ROUNDS[r["k"]] for r in rows)
    return ok, {"rows": rows, "trend": build_time_trend(rows)}


SUITES: dict[str, Callable[[bool, int], tuple[bool, dict]]] = {
    "bop": _suite_bop, "op": _suite_op, "native": _suite_native, "faults": _suite_faults,
    "malicious": _suite_malicious, "bounds": _suite_bounds, "memory": _suite_memory,
    "rounds": _suite_rounds,
}


def run_suite(name: str, quick: bool = False, seed: int = 0) -> dict[str, Any]:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    start = time.perf_counter()
    ok, summary = SUITES[name](quick, seed)
    return {"suite": name, "ok": bool(ok), "seconds": time.perf_counter() - start, "summary": summary}
