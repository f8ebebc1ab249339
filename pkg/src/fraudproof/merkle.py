"""k-ary Keccak-256 Merkle trees, openings and the fixed-width encodings.

Leaf digest: ``keccak(domain || index:u32be || leaf bytes)``. Parent digest:
``keccak(child_0 || ... || child_{k-1})`` where children past the last real
node are the all-zero digest. A node exists iff at least one real leaf lies
beneath it, so level ``i`` holds ``ceil(n / k**i)`` digests and the tree has
``ceil(log_k(max(n, 2)))`` levels above the leaves.

Cells are 8 bytes: ``tag, 0, 0, 0, value:u32be``. The tag is the dtype code
for concrete values, ``0x10`` for a variable reference and ``0x20 | dtype``
for a literal constant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import sha3

from .dtypes import DType

DIGEST_SIZE = 32
ZERO = bytes(DIGEST_SIZE)
MIN_K, MAX_K = 2, 64

# domain separation, one tag per tree kind
P1S, P1C, P2S, P2C = 0x11, 0x12, 0x21, 0x22
OPERANDS, TENSOR, DIGESTS, SOURCES = 0x31, 0x32, 0x33, 0x34
PLAIN = 0x00

VAR_TAG = 0x10
CONST_TAG = 0x20


def keccak(data: bytes) -> bytes:
    """Keccak-256 with the original padding (Ethereum's hash, not SHA3-256)."""
    return sha3.keccak_256(data).digest()


def depth_for(n: int, k: int) -> int:
    """ceil(log_k(max(n, 2))) computed exactly in integers."""
    d, cap = 1, k
    while cap < n:
        cap *= k
        d += 1
    return d


def leaf_digest(domain: int, index: int, leaf: bytes) -> bytes:
    return keccak(bytes((domain,)) + index.to_bytes(4, "big") + leaf)


def hash_children(children: Sequence[bytes], k: int) -> bytes:
    if len(children) < k:
        children = list(children) + [ZERO] * (k - len(children))
    return keccak(b"".join(children))


def _check_k(k: int) -> None:
    if not MIN_K <= k <= MAX_K:
        raise ValueError(f"branch factor {k} outside [{MIN_K}, {MAX_K}]")


class MerkleTree:
    """Immutable k-ary tree; ``levels[0]`` are leaf digests, ``levels[-1] == [root]``."""

    def __init__(self, levels: list[list[bytes]], k: int, domain: int, leaf_size: int):
        self.levels = levels
        self.k = k
        self.domain = domain
        self.leaf_size = leaf_size

    @property
    def n(self) -> int:
        return len(self.levels[0])

    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    @property
    def root(self) -> bytes:
        return self.levels[-1][0]

    def node(self, level: int, index: int) -> bytes:
        """Digest at ``level`` (0 = leaves); zero digest for padding positions."""
        row = self.levels[level]
        return row[index] if index < len(row) else ZERO

    def children(self, level: int, index: int) -> list[bytes]:
        """The k child digests of node ``index`` at ``level`` >= 1."""
        row = self.levels[level - 1]
        start = index * self.k
        group = row[start:start + self.k]
        return group + [ZERO] * (self.k - len(group))

    def real_children(self, level: int, index: int) -> int:
        row = self.levels[level - 1]
        return max(0, min(self.k, len(row) - index * self.k))

    def with_leaves(self, changes: Mapping[int, bytes]) -> "MerkleTree":
        """A new tree with some leaves replaced; only the affected paths are rehashed."""
        if not changes:
            return self
        levels = [list(self.levels[0])]
        dirty = set()
        for idx, leaf in changes.items():
            if not 0 <= idx < self.n:
                raise IndexError(f"leaf {idx} out of range")
            if len(leaf) != self.leaf_size:
                raise ValueError("leaf length differs from the tree's fixed leaf size")
            levels[0][idx] = leaf_digest(self.domain, idx, leaf)
            dirty.add(idx)
        for lvl in range(1, len(self.levels)):
            row = list(self.levels[lvl])
            below = levels[lvl - 1]
            parents = {i // self.k for i in dirty}
            for p in parents:
                row[p] = hash_children(below[p * self.k:(p + 1) * self.k], self.k)
            levels.append(row)
            dirty = parents
        return MerkleTree(levels, self.k, self.domain, self.leaf_size)


def build_from_digests(digests: list[bytes], k: int, domain: int = PLAIN, leaf_size: int = 0) -> MerkleTree:
    _check_k(k)
    if not digests:
        raise ValueError("cannot build a tree over zero leaves")
    levels = [digests]
    for _ in range(depth_for(len(digests), k)):
        below = levels[-1]
        levels.append([hash_children(below[i:i + k], k) for i in range(0, len(below), k)])
    return MerkleTree(levels, k, domain, leaf_size)


def build_tree(leaves: Sequence[bytes], k: int = 32, domain: int = PLAIN) -> MerkleTree:
    """Tree over fixed-length leaves; raises ``ValueError`` on empty input or bad k."""
    _check_k(k)
    if not leaves:
        raise ValueError("cannot build a tree over zero leaves")
    size = len(leaves[0])
    if any(len(leaf) != size for leaf in leaves):
        raise ValueError("leaves must all have the same length")
    prefix = bytes((domain,))
    digests = [keccak(prefix + i.to_bytes(4, "big") + leaf) for i, leaf in enumerate(leaves)]
    return build_from_digests(digests, k, domain, size)


def root_of(leaves: Sequence[bytes], k: int, domain: int) -> bytes:
    return build_tree(leaves, k, domain).root


@dataclass(frozen=True)
class MerklePath:
    index: int
    n: int
    leaf: bytes
    siblings: tuple[tuple[bytes, ...], ...]  # bottom-up, k-1 digests per level

    def wire_size(self) -> int:
        return 8 + len(self.leaf) + DIGEST_SIZE * sum(len(g) for g in self.siblings)


def open_path(t: MerkleTree, index: int, leaf: bytes) -> MerklePath:
    """Opening of leaf ``index``; ``leaf`` is the leaf's bytes (trees keep digests only)."""
    if not 0 <= index < t.n:
        raise IndexError(f"leaf index {index} out of range for {t.n} leaves")
    if leaf_digest(t.domain, index, leaf) != t.levels[0][index]:
        raise ValueError("leaf bytes do not match the committed leaf")
    groups = []
    pos = index
    for lvl in range(1, len(t.levels)):
        parent = pos // t.k
        kids = t.children(lvl, parent)
        groups.append(tuple(kids[:pos % t.k] + kids[pos % t.k + 1:]))
        pos = parent
    return MerklePath(index, t.n, leaf, tuple(groups))


def verify_path(root: bytes, path: MerklePath, k: int, domain: int = PLAIN) -> bool:
    """True iff the path recomputes ``root`` and its shape is legal for ``path.n`` leaves."""
    if not 0 <= path.index < path.n:
        return False
    if len(path.siblings) != depth_for(path.n, k):
        return False
    digest = leaf_digest(domain, path.index, path.leaf)
    pos, width = path.index, path.n
    for group in path.siblings:
        if len(group) != k - 1:
            return False
        slot = pos % k
        kids = list(group[:slot]) + [digest] + list(group[slot:])
        base = pos - slot
        # positions past the last real node must be zero padding
        if any(kids[j] != ZERO for j in range(k) if base + j >= width):
            return False
        digest = keccak(b"".join(kids))
        pos //= k
        width = -(-width // k)
    return digest == root


# ---------------------------------------------------------------------------
# cells

def value_cell(dtype: DType, word: int) -> bytes:
    return bytes((dtype.code, 0, 0, 0)) + word.to_bytes(4, "big")


def var_cell(var: int) -> bytes:
    return bytes((VAR_TAG, 0, 0, 0)) + var.to_bytes(4, "big")


def const_cell(dtype: DType, word: int) -> bytes:
    return bytes((CONST_TAG | dtype.code, 0, 0, 0)) + word.to_bytes(4, "big")


def decode_cell(cell: bytes) -> tuple[str, DType | None, int]:
    """("value" | "var" | "const", dtype, 32-bit field)."""
    if len(cell) != 8 or cell[1:4] != b"\x00\x00\x00":
        raise ValueError("malformed cell")
    tag, word = cell[0], int.from_bytes(cell[4:], "big")
    if tag == VAR_TAG:
        return "var", None, word
    if tag & 0xF0 == CONST_TAG:
        return "const", DType.from_code(tag & 0x0F), word
    return "value", DType.from_code(tag), word


def source_cell(producer: int, slot: int, offset: int, numel: int) -> bytes:
    return b"".join(x.to_bytes(4, "big") for x in (producer, slot, offset, numel))


def decode_source_cell(cell: bytes) -> tuple[int, int, int, int]:
    if len(cell) != 16:
        raise ValueError("malformed source cell")
    return tuple(int.from_bytes(cell[i:i + 4], "big") for i in range(0, 16, 4))  # type: ignore[return-value]


def tensor_cells(dtype: DType, words: Iterable[int]) -> list[bytes]:
    """Value cells of many words at once."""
    w = np.asarray(list(words), dtype=">u4")
    raw = np.zeros((w.size, 8), dtype=np.uint8)
    raw[:, 0] = dtype.code
    raw[:, 4:] = w.view(np.uint8).reshape(-1, 4)
    blob = raw.tobytes()
    return [blob[i:i + 8] for i in range(0, len(blob), 8)]


def tensor_tree(dtype: DType, words: Sequence[int], k: int) -> MerkleTree:
    return build_tree(tensor_cells(dtype, words), k, TENSOR)


def digests_root(digests: Sequence[bytes], k: int) -> bytes:
    return build_tree(list(digests), k, DIGESTS).root
