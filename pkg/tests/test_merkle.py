import hashlib
from dataclasses import replace

import pytest
from Crypto.Hash import keccak as pycryptodome_keccak
from hypothesis import given
from hypothesis import strategies as st

from fraudproof.commit import (
    BOP_LEAF_SIZE, bop_leaf, decode_bop_leaf, decode_op_leaf, digests_tree, op_leaf, operand_root, tensor_digest,
)
from fraudproof.corpus import fig5_inputs
from fraudproof.dtypes import DType
from fraudproof.graph import Tensor
from fraudproof.merkle import (
    OPERANDS, P1C, PLAIN, ZERO, build_tree, const_cell, decode_cell, depth_for, keccak, leaf_digest, open_path, value_cell,
    var_cell, verify_path,
)
from fraudproof.numerics.bops import BopKind

EMPTY = "c5d2460186f7233c927e7db2dcc703c0e500b653ca82273b7bfad8045d85a470"


def leaves(n, size=8, salt=b""):
    return [keccak(salt + i.to_bytes(4, "big"))[:size] for i in range(n)]


def independent_keccak(data: bytes) -> bytes:
    h = pycryptodome_keccak.new(digest_bits=256)
    h.update(data)
    return h.digest()


def test_keccak_empty_vector():
    assert keccak(b"").hex() == EMPTY
    assert independent_keccak(b"").hex() == EMPTY
    # the original padding, not the standardised one
    assert hashlib.sha3_256(b"").hexdigest() != EMPTY


@given(st.binary(max_size=300))
def test_keccak_matches_independent_implementation(data):
    assert keccak(data) == independent_keccak(data)


@pytest.mark.parametrize("n, k, depth", [(1024, 32, 2), (1024, 2, 10), (1, 32, 1), (2, 2, 1), (3, 2, 2),
                                         (33, 32, 2), (32, 32, 1), (1025, 32, 3)])
def test_depth(n, k, depth):
    assert depth_for(n, k) == depth
    assert build_tree(leaves(n), k).depth == depth


@given(st.integers(1, 5000), st.integers(2, 64))
def test_depth_is_ceil_log(n, k):
    d = depth_for(n, k)
    assert k ** d >= max(n, 2) and (d == 1 or k ** (d - 1) < n)


def test_single_leaf_is_padded_to_one_level():
    leaf = b"\x01" * 8
    t = build_tree([leaf], 32, P1C)
    assert t.root == keccak(leaf_digest(P1C, 0, leaf) + ZERO * 31)


def test_bad_arity_and_empty_rejected():
    with pytest.raises(ValueError):
        build_tree(leaves(4), 1)
    with pytest.raises(ValueError):
        build_tree(leaves(4), 65)
    with pytest.raises(ValueError):
        build_tree([], 2)
    with pytest.raises(ValueError):
        build_tree([b"ab", b"abc"], 2)


@pytest.mark.parametrize("k", [2, 4, 32])
def test_every_opening_verifies_exhaustively(k):
    for n in range(1, 65):
        ls = leaves(n, salt=bytes((k,)))
        t = build_tree(ls, k)
        for i in range(n):
            assert verify_path(t.root, open_path(t, i, ls[i]), k)


def test_openings_fail_against_other_root():
    a, b = build_tree(leaves(10), 4), build_tree(leaves(10, salt=b"x"), 4)
    assert not verify_path(b.root, open_path(a, 3, leaves(10)[3]), 4)


def test_opening_checks_domain():
    ls = leaves(5)
    t = build_tree(ls, 4, P1C)
    path = open_path(t, 2, ls[2])
    assert verify_path(t.root, path, 4, P1C)
    assert not verify_path(t.root, path, 4, PLAIN)


def test_open_rejects_wrong_leaf_bytes():
    ls = leaves(5)
    t = build_tree(ls, 2)
    with pytest.raises(ValueError):
        open_path(t, 0, ls[1])
    with pytest.raises(IndexError):
        open_path(t, 5, ls[0])


@given(st.integers(1, 40), st.sampled_from([2, 3, 4, 32]), st.data())
def test_flipped_sibling_byte_fails(n, k, data):
    ls = leaves(n)
    t = build_tree(ls, k)
    i = data.draw(st.integers(0, n - 1))
    path = open_path(t, i, ls[i])
    lvl = data.draw(st.integers(0, len(path.siblings) - 1))
    j = data.draw(st.integers(0, k - 2))
    byte = data.draw(st.integers(0, 31))
    groups = [list(g) for g in path.siblings]
    d = bytearray(groups[lvl][j])
    d[byte] ^= 0x01
    groups[lvl][j] = bytes(d)
    bad = replace(path, siblings=tuple(tuple(g) for g in groups))
    assert not verify_path(t.root, bad, k)


@pytest.mark.parametrize("k", [2, 4])
def test_index_is_bound_into_the_opening(k):
    for n in range(2, 17):
        ls = leaves(n)
        t = build_tree(ls, k)
        for i in range(n):
            path = open_path(t, i, ls[i])
            for j in range(n):
                if j != i:
                    assert not verify_path(t.root, replace(path, index=j), k)
            assert not verify_path(t.root, replace(path, n=n + k ** t.depth), k)


@given(st.integers(1, 80), st.sampled_from([2, 4, 32]), st.data())
def test_any_leaf_change_moves_the_root(n, k, data):
    ls = leaves(n)
    t = build_tree(ls, k)
    i = data.draw(st.integers(0, n - 1))
    new = data.draw(st.binary(min_size=8, max_size=8).filter(lambda b: b != ls[i]))
    changed = ls[:i] + [new] + ls[i + 1:]
    assert build_tree(changed, k).root != t.root
    assert t.with_leaves({i: new}).root == build_tree(changed, k).root


def test_wire_size_counts_siblings():
    ls = leaves(100)
    path = open_path(build_tree(ls, 4), 7, ls[7])
    assert path.wire_size() == 8 + 8 + 32 * 3 * depth_for(100, 4)


# --- encodings ---------------------------------------------------------------

def test_fig5_sum_leaf_encoding():
    k = 32
    ops = [value_cell(DType.I32, 5), value_cell(DType.I32, 12)]
    leaf = bop_leaf(BopKind.I32_ADD, ops, value_cell(DType.I32, 17), k)
    assert len(leaf) == BOP_LEAF_SIZE
    code, root, result = decode_bop_leaf(leaf)
    assert BopKind.from_code(code) is BopKind.I32_ADD
    assert root == build_tree(ops, k, OPERANDS).root
    assert decode_cell(result) == ("value", DType.I32, 17)


def test_fig5_inputs_digest_covers_all_six_values():
    k = 32
    vals = fig5_inputs()
    root = digests_tree([tensor_digest(vals["A"], k), tensor_digest(vals["B"], k)], k).root
    for name, t in vals.items():
        for e in range(t.numel):
            p = t.payloads()
            p[e] += 1
            other = dict(vals, **{name: Tensor.from_payloads(DType.I32, t.shape, p)})
            moved = digests_tree([tensor_digest(other["A"], k), tensor_digest(other["B"], k)], k).root
            assert moved != root


def test_leaves_differing_in_result_encode_differently():
    ops = [value_cell(DType.I32, 5), value_cell(DType.I32, 12)]
    a = bop_leaf(BopKind.I32_ADD, ops, value_cell(DType.I32, 17), 4)
    b = bop_leaf(BopKind.I32_ADD, ops, value_cell(DType.I32, 18), 4)
    assert a != b


@given(st.sampled_from(list(DType)), st.integers(0, 0xFFFFFFFF), st.integers(0, 0xFFFFFFFF))
def test_cells_are_injective(dtype, w1, w2):
    cells = {value_cell(dtype, w1), var_cell(w1), const_cell(dtype, w1)}
    assert len(cells) == 3
    assert (value_cell(dtype, w1) == value_cell(dtype, w2)) == (w1 == w2)
    assert decode_cell(const_cell(dtype, w1)) == ("const", dtype, w1)
    assert decode_cell(var_cell(w1)) == ("var", None, w1)


@given(st.lists(st.binary(min_size=8, max_size=8), min_size=1, max_size=3),
       st.lists(st.binary(min_size=8, max_size=8), min_size=1, max_size=3))
def test_operand_roots_are_injective(a, b):
    if a != b:
        assert operand_root(a, 4) != operand_root(b, 4)


def test_op_leaf_round_trip():
    parts = (b"\x01" * 32, b"\x02" * 32, b"\x03" * 32)
    assert decode_op_leaf(op_leaf(*parts)) == parts
    with pytest.raises(ValueError):
        decode_op_leaf(b"\x00" * 97)


def test_operand_tree_padding_matches_generic_tree():
    for n in (1, 2):
        cells = [value_cell(DType.F32, i) for i in range(n)]
        assert operand_root(cells, 8) == build_tree(cells, 8, OPERANDS).root
