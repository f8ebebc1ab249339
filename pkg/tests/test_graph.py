import copy
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fraudproof.corpus import MODELS, build_corpus, fig5, get_model, random_inputs
from fraudproof.dtypes import DType
from fraudproof.graph import (
    CycleError, Graph, GraphError, ModelParseError, OpNode, Tensor, TensorMeta, graph_from_document,
    graph_to_document, inputs_from_document, inputs_to_document, load_model, serialize_model,
    structurally_equal, topo_order_ops, validate_graph,
)

F32 = DType.F32


def doc(nodes, inputs=(("x", "f32", [3]),), outputs=(("y", "f32", [3]),)):
    return {
        "version": 1,
        "inputs": [{"name": n, "dtype": d, "shape": s} for n, d, s in inputs],
        "outputs": [{"name": n, "dtype": d, "shape": s} for n, d, s in outputs],
        "nodes": [{"id": i, "kind": k, "inputs": ins, "outputs": outs} for i, k, ins, outs in nodes],
    }


def relu_chain(ids):
    nodes, prev = [], "x"
    for i, nid in enumerate(ids):
        out = "y" if i == len(ids) - 1 else f"e{i}"
        nodes.append((nid, "Relu", [prev], [out]))
        prev = out
    return doc(nodes)


def test_minimal_relu_model():
    g = load_model(json.dumps(doc([("r", "Relu", ["x"], ["y"])])))
    assert len(g.nodes) == 1
    assert set(g.edges) == {"x", "y"}


def test_fig5_groups_six_inputs_into_two_tensors():
    g = fig5()
    assert validate_graph(g) == []
    assert [m.numel for _, m in g.inputs] == [4, 2]
    assert len(g.nodes) == 1 and g.nodes[0].kind == "MatMulInteger"


def test_cycle_is_rejected():
    d = doc([("a", "Relu", ["y"], ["e"]), ("b", "Relu", ["e"], ["y"])])
    with pytest.raises(GraphError) as info:
        load_model(json.dumps(d))
    assert any("cycle" in x for x in info.value.diagnostics)
    with pytest.raises(CycleError):
        topo_order_ops(graph_from_document(d))


def test_valid_chain_has_no_diagnostics():
    assert validate_graph(graph_from_document(relu_chain(["a", "b", "c"]))) == []


def test_inner_dimension_mismatch_gives_one_diagnostic():
    d = doc([("mm", "MatMul", ["a", "b"], ["y"])],
            inputs=(("a", "f32", [2, 3]), ("b", "f32", [2, 1])), outputs=(("y", "f32", [2, 1]),))
    diags = validate_graph(graph_from_document(d))
    assert len(diags) == 1 and "mm" in diags[0]


def test_dangling_edge_gives_one_diagnostic():
    d = doc([("r", "Relu", ["ghost"], ["y"])])
    diags = validate_graph(graph_from_document(d))
    assert len(diags) == 1 and "ghost" in diags[0]


def test_zero_extent_rejected():
    d = doc([("r", "Relu", ["x"], ["y"])], inputs=(("x", "f32", [0]),), outputs=(("y", "f32", [0]),))
    assert validate_graph(graph_from_document(d))


def test_unknown_kind_and_attribute_reported():
    d = doc([("r", "Softmax", ["x"], ["y"])])
    assert any("unknown op kind" in x for x in validate_graph(graph_from_document(d)))
    d = doc([("r", "Relu", ["x"], ["y"])])
    d["nodes"][0]["attributes"] = {"alpha": 1.0}
    assert any("unknown attributes" in x for x in validate_graph(graph_from_document(d)))


def test_chain_order():
    assert topo_order_ops(graph_from_document(relu_chain(["A", "B", "C"]))) == ["A", "B", "C"]


def test_diamond_breaks_ties_by_id():
    d = doc([("D", "Add", ["c1", "c2"], ["y"]), ("C", "Relu", ["a"], ["c2"]),
             ("B", "Relu", ["a"], ["c1"]), ("A", "Relu", ["x"], ["a"])])
    assert topo_order_ops(graph_from_document(d)) == ["A", "B", "C", "D"]


def test_single_node_order():
    assert topo_order_ops(graph_from_document(doc([("only", "Relu", ["x"], ["y"])]))) == ["only"]


@pytest.mark.parametrize("name", list(MODELS) + ["chain-16"])
def test_corpus_models_round_trip(name):
    g = get_model(name)
    assert validate_graph(g) == []
    back = load_model(serialize_model(g))
    assert structurally_equal(g, back)
    assert serialize_model(back) == serialize_model(g)


def test_corpus_is_deterministic():
    a, b = build_corpus(), build_corpus()
    assert all(structurally_equal(a[n], b[n]) for n in a)


def test_input_document_keeps_nan_payloads_and_signed_zero():
    t = Tensor.from_payloads(F32, (3,), [0x7FC00001, 0x80000000, 0x3F800000])
    back = inputs_from_document(json.loads(json.dumps(inputs_to_document({"x": t}))))["x"]
    assert back.bit_equal(t)


def test_initializer_byte_count_checked():
    d = graph_to_document(get_model("mini-mlp"))
    d["initializers"][0]["data"] = "AAAA"
    with pytest.raises(ModelParseError):
        graph_from_document(d)


# --- properties --------------------------------------------------------------

@st.composite
def random_dags(draw):
    """Valid graphs of Relu/Add/Sub over a shared [4] f32 shape, with shuffled ids."""
    n = draw(st.integers(1, 12))
    ids = draw(st.permutations([f"n{i:02d}" for i in range(n)]))
    edges = ["x"]
    nodes = []
    for i in range(n):
        kind = draw(st.sampled_from(["Relu", "Add", "Sub"]))
        arity = 1 if kind == "Relu" else 2
        ins = [draw(st.sampled_from(edges)) for _ in range(arity)]
        out = f"e{i}"
        nodes.append(OpNode(ids[i], kind, ins, [out]))
        edges.append(out)
    nodes = draw(st.permutations(nodes))
    meta = TensorMeta(F32, (4,))
    return Graph([("x", meta)], [(f"e{n - 1}", meta)], list(nodes))


@given(random_dags())
def test_topological_order_respects_every_edge(g):
    order = topo_order_ops(g)
    index = {nid: i for i, nid in enumerate(order)}
    producer = {n.output: n.id for n in g.nodes}
    for n in g.nodes:
        for e in n.inputs:
            if e in producer:
                assert index[producer[e]] < index[n.id]
    assert sorted(order) == sorted(n.id for n in g.nodes)


@given(random_dags())
def test_documents_round_trip(g):
    assert validate_graph(g) == []
    back = load_model(serialize_model(g))
    assert structurally_equal(g, back)


_MUTATIONS = ["drop_node", "rename_input", "bad_dtype", "bad_shape", "drop_field", "dup_output", "bad_kind",
              "extra_input", "version"]


@given(st.sampled_from(sorted(MODELS)), st.lists(st.tuples(st.sampled_from(_MUTATIONS), st.integers(0, 99)),
                                                  min_size=1, max_size=3))
def test_mutated_documents_fail_cleanly(name, mutations):
    d = copy.deepcopy(graph_to_document(get_model(name)))
    for what, r in mutations:
        nodes = d["nodes"]
        node = nodes[r % len(nodes)] if nodes else None
        if what == "drop_node" and nodes:
            nodes.pop(r % len(nodes))
        elif what == "rename_input" and node:
            node["inputs"][r % len(node["inputs"])] = f"missing{r}"
        elif what == "bad_dtype":
            d["inputs"][0]["dtype"] = "f64"
        elif what == "bad_shape":
            d["inputs"][0]["shape"] = [r % 3, -1]
        elif what == "drop_field" and node:
            node.pop("outputs", None)
        elif what == "dup_output" and node and "outputs" in node:
            node["outputs"] = node["outputs"] * 2
        elif what == "bad_kind" and node:
            node["kind"] = "Softmax"
        elif what == "extra_input" and node:
            node["inputs"] = node["inputs"] + ["x"] * 4
        elif what == "version":
            d["version"] = 2
    try:
        g = load_model(json.dumps(d))
    except (ModelParseError, GraphError):
        return
    assert validate_graph(g) == []


def test_random_inputs_match_declared_meta():
    for name in MODELS:
        g = get_model(name)
        vals = random_inputs(g, 3)
        for n, meta in g.inputs:
            assert vals[n].meta == meta
        assert all(np.array_equal(vals[n].data, random_inputs(g, 3)[n].data) for n in vals)
