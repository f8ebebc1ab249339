import gc

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fraudproof.circuit import lower_op
from fraudproof.commit import PreparedModel
from fraudproof.corpus import MODELS, fig5_inputs, get_model, random_inputs
from fraudproof.dtypes import DType
from fraudproof.evaluators import (
    TraceMeter, circuit_inputs, eval_circuit, eval_graph_native, eval_graph_ops, eval_op_circuit, op_inputs,
)
from fraudproof.experiments import bop_suite, check_op_instance, op_instances, op_suite
from fraudproof.graph import SUPPORTED_KINDS, Graph, OpNode, Tensor, TensorMeta
from fraudproof.kernels import INT_ACCUMULATE, override_int_accumulation, override_kernel, self_test, wrap32
from fraudproof.numerics import reference
from fraudproof.numerics.bops import BopKind, ScalarValue

F32, I32 = DType.F32, DType.I32


def f32s(*xs):
    return [ScalarValue.from_float(x) for x in xs]


def test_fig5_circuit_values(fig5_model, fig5_values):
    bt = eval_op_circuit(fig5_model, 1, [fig5_values["A"], fig5_values["B"]])
    results = [vi.result.payload for vi in bt if vi.tag == "bop"]
    assert results == [5, 12, 15, 24, 17, 39]
    out = bt.vi(7)
    assert out.tag == "out" and [v.payload for v in out.values] == [17, 39]
    assert [v.payload for v in bt.vi(0).values] == [1, 2, 3, 4, 5, 6]


def test_fig5_graph_outputs(fig5_model, fig5_values):
    native = eval_graph_native(fig5_model, fig5_values)
    assert native.outputs["Y"].payloads() == [17, 39]
    ops = eval_graph_ops(fig5_model, fig5_values)
    assert ops.outputs["Y"].payloads() == [17, 39]
    assert len(ops) == 3  # in, MatMulInteger, out
    assert ops.out_digest == native.digest


def test_relu_circuit():
    c = lower_op(OpNode("r", "Relu", ["x"], ["y"]), [TensorMeta(F32, (3,))])
    out = eval_circuit(c, f32s(-1.0, 0.0, 2.5)).outputs()
    assert [v.payload for v in out] == [0, 0, reference.from_float(2.5)]


def test_sequential_sum_circuit():
    c = lower_op(OpNode("s", "ReduceSum", ["x"], ["y"], {"keepdims": 0}), [TensorMeta(F32, (3,))])
    for path in ("reference", "emulated"):
        assert eval_circuit(c, f32s(1e30, -1e30, 1.0), path).outputs() == f32s(1.0)


def test_circuit_input_dtype_checked():
    c = lower_op(OpNode("r", "Relu", ["x"], ["y"]), [TensorMeta(F32, (1,))])
    with pytest.raises(TypeError):
        eval_circuit(c, [ScalarValue.i32(1)])
    with pytest.raises(ValueError):
        eval_circuit(c, f32s(1.0, 2.0))


def test_identity_model_is_bitwise():
    m = TensorMeta(F32, (4,))
    g = Graph([("x", m)], [("y", m)], [OpNode("c", "Cast", ["x"], ["y"], {"to": "f32"})])
    x = Tensor.from_payloads(F32, (4,), [0x80000000, 0x00000001, 0x7F800000, 0x3F800000])
    assert eval_graph_native(g, {"x": x}).outputs["y"].bit_equal(x)
    assert eval_graph_ops(g, {"x": x}).outputs["y"].bit_equal(x)


def test_mlp_native_digest_matches_trace(mlp):
    pm, inputs = mlp
    assert eval_graph_native(pm, inputs).digest == eval_graph_ops(pm, inputs).out_digest


def test_chain_trace_is_repeatable():
    pm = PreparedModel(get_model("chain-3"))
    inputs = random_inputs(pm.graph, 4)
    a, b = eval_graph_ops(pm, inputs), eval_graph_ops(pm, inputs)
    assert len(a) == 5
    assert [r.output_digest for r in a.records] == [r.output_digest for r in b.records]
    assert a.out_digest == b.out_digest


@pytest.mark.parametrize("name", ["mini-mlp", "mini-cnn", "reduce-stress"])
def test_prefix_matches_full_trace(name):
    pm = PreparedModel(get_model(name))
    inputs = random_inputs(pm.graph, 1)
    full = eval_graph_ops(pm, inputs)
    for i in range(1, pm.n_ops + 1):
        prefix = eval_graph_ops(pm, inputs, upto=i)
        assert len(prefix.records) == i
        assert prefix.records[-1].output_digest == full.record(i).output_digest


@pytest.mark.parametrize("name", sorted(MODELS))
def test_three_evaluators_agree(name):
    pm = PreparedModel(get_model(name))
    inputs = random_inputs(pm.graph, 7)
    trace = eval_graph_ops(pm, inputs)
    for threads in (1, 2, 3, "max"):
        assert eval_graph_native(pm, inputs, threads).digest == trace.out_digest
    for p in range(1, pm.n_ops + 1):
        tensors = op_inputs(pm, trace, p, inputs)
        for path in ("reference", "emulated"):
            assert eval_op_circuit(pm, p, tensors, path).output_tensor().bit_equal(trace.record(p).output)


def test_operation_trace_holds_no_circuit_records():
    pm = PreparedModel(get_model("mini-cnn"))
    meter = TraceMeter()
    trace = eval_graph_ops(pm, random_inputs(pm.graph, 0), meter=meter)
    assert meter.peak == len(trace) == pm.n_ops + 2
    del trace
    gc.collect()
    assert meter.live == 0


def test_host_primitives_pass_self_test():
    assert self_test() == []


@given(st.sampled_from(SUPPORTED_KINDS), st.integers(0, 2**20))
@settings(max_examples=200)
def test_kernel_matches_circuit(kind, seed):
    for _, node, tensors in op_instances(kind, 1, 1, seed):
        equal, _, _ = check_op_instance(node, tensors)
        assert equal


@given(st.sampled_from(SUPPORTED_KINDS), st.integers(0, 2**20))
@settings(max_examples=50)
def test_circuit_paths_agree(kind, seed):
    _, node, tensors = next(op_instances(kind, 1, 0, seed))
    c = lower_op(node, [t.meta for t in tensors])
    xs = circuit_inputs(tensors)
    assert eval_circuit(c, xs, "reference").values == eval_circuit(c, xs, "emulated").values


# --- mutation checks ---------------------------------------------------------

def _fast_math_gemm(ins, attrs, out, ctx):
    """Double-precision accumulation with a single final rounding, as a contracting compiler might do."""
    with np.errstate(all="ignore"):
        a, w = ins[0].data.astype(np.float64), ins[1].data.astype(np.float64)
        a = a.T if attrs["transA"] else a
        w = w.T if attrs["transB"] else w
        y = attrs["alpha"] * (a @ w)
        if len(ins) == 3:
            y = y + attrs["beta"] * np.broadcast_to(ins[2].data, out.shape)
        return y.astype(np.float32)


def test_fast_math_kernel_is_caught():
    with override_kernel("Gemm", _fast_math_gemm):
        rep = op_suite(20, 100, kinds=["Gemm"])
    assert not rep.ok
    assert rep.mismatch_count > 0
    assert op_suite(20, 100, kinds=["Gemm"]).ok


def _reversed_matmul(a, w, ctx):
    # accumulate k in descending order, wrapping at every step
    acc = np.zeros((a.shape[0], w.shape[1]), dtype=np.int64)
    for k in reversed(range(a.shape[1])):
        acc = wrap32(acc + wrap32(np.outer(a[:, k], w[k])))
    return acc


def test_integer_accumulation_order_is_irrelevant():
    with override_int_accumulation("matmul", _reversed_matmul):
        assert INT_ACCUMULATE["matmul"] is _reversed_matmul
        rep = op_suite(20, 200, kinds=["MatMulInteger", "ConvInteger"])
        native = eval_graph_native(PreparedModel(get_model("fig5")), fig5_inputs())
    assert rep.ok, rep.mismatches[:2]
    assert native.outputs["Y"].payloads() == [17, 39]


def test_wrong_reference_primitive_is_caught():
    def sloppy_add(a, b):
        r = reference.add(a, b)
        return r ^ 1 if r not in (0, 0x80000000) and (r & 0x7F800000) != 0x7F800000 else r

    rep = bop_suite(2000, seed=3, kinds=[BopKind.F32_ADD], override={BopKind.F32_ADD: sloppy_add})
    assert not rep.ok
