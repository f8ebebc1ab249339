"""Arbitrator API messages with a canonical binary wire form.

Every message carries ``seq``, the arbitrator's move counter when the message
was composed; a message with a stale ``seq`` is refused, so replays are inert.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any, ClassVar

from ..merkle import MerklePath, keccak

SUBMITTER, VERIFIER, ANY = "submitter", "verifier", "any"


def _enc(value: Any) -> bytes:
    if isinstance(value, bool):
        return b"\x01" + bytes((int(value),))
    if isinstance(value, int):
        return b"\x02" + value.to_bytes(8, "big", signed=True)
    if isinstance(value, bytes):
        return b"\x03" + len(value).to_bytes(4, "big") + value
    if isinstance(value, str):
        raw = value.encode()
        return b"\x04" + len(raw).to_bytes(4, "big") + raw
    if value is None:
        return b"\x05"
    if isinstance(value, (list, tuple)):
        return b"\x06" + len(value).to_bytes(4, "big") + b"".join(_enc(v) for v in value)
    if isinstance(value, MerklePath):
        return b"\x07" + _enc([value.index, value.n, value.leaf, [list(g) for g in value.siblings]])
    if dataclasses.is_dataclass(value):
        return b"\x08" + b"".join(_enc(getattr(value, f.name)) for f in dataclasses.fields(value))
    raise TypeError(f"cannot encode {type(value).__name__}")


@dataclass(frozen=True)
class Message:
    API: ClassVar[str] = ""
    ROLE: ClassVar[str] = ANY

    def wire(self) -> bytes:
        return _enc(self.API) + _enc(self)

    def digest(self) -> bytes:
        return keccak(self.wire())

    def size(self) -> int:
        return len(self.wire())


@dataclass(frozen=True)
class Claim:
    task_id: str
    submitter: str
    model_id: str
    inputs_digest: bytes
    p1s_root: bytes
    output_digest: bytes


@dataclass(frozen=True)
class Endorsement:
    """The quorum's unanimous Prepare record, preloaded as trusted."""

    task_id: str
    model_id: str
    p1s_root: bytes
    inputs_digest: bytes
    n_ops: int
    n_outputs: int
    quorum: tuple[str, ...]
    k: int


@dataclass(frozen=True)
class SubmitClaim(Message):
    API: ClassVar[str] = "submit_claim"
    ROLE: ClassVar[str] = SUBMITTER
    claim: Claim
    seq: int = 0


@dataclass(frozen=True)
class Challenge(Message):
    API: ClassVar[str] = "challenge"
    ROLE: ClassVar[str] = VERIFIER
    seq: int


@dataclass(frozen=True)
class CommitP1(Message):
    """Concrete operation-trace triple plus the symbolic triple behind the endorsed root."""

    API: ClassVar[str] = "commit_p1"
    ROLE: ClassVar[str] = SUBMITTER
    seq: int
    concrete: tuple[bytes, bytes, bytes]
    symbolic: tuple[bytes, bytes, bytes]


@dataclass(frozen=True)
class Select(Message):
    """Top level: 0 = in record, 1 = body, 2 = out record; while narrowing: child index."""

    API: ClassVar[str] = "select"
    ROLE: ClassVar[str] = VERIFIER
    seq: int
    index: int


@dataclass(frozen=True)
class Children(Message):
    API: ClassVar[str] = "respond_children"
    ROLE: ClassVar[str] = SUBMITTER
    seq: int
    digests: tuple[bytes, ...]


@dataclass(frozen=True)
class RevealP1(Message):
    API: ClassVar[str] = "reveal_p1"
    ROLE: ClassVar[str] = SUBMITTER
    seq: int
    op_leaf: bytes
    symbolic_path: MerklePath
    input_digests: tuple[bytes, ...]


@dataclass(frozen=True)
class DisputeP1(Message):
    """kind: "structure", "input" (with ``index``) or "output"."""

    API: ClassVar[str] = "dispute_p1"
    ROLE: ClassVar[str] = VERIFIER
    seq: int
    kind: str
    index: int = 0


@dataclass(frozen=True)
class ProveSource(Message):
    """Input ``j`` of the disputed operation equals the committed output it reads.

    ``source_path`` opens the symbolic sources tree at j. For a graph source
    ``evidence`` opens the concrete in record at the slot; otherwise it opens
    the producer's concrete operation leaf.
    """

    API: ClassVar[str] = "prove_source"
    ROLE: ClassVar[str] = SUBMITTER
    seq: int
    source_path: MerklePath
    evidence: MerklePath


@dataclass(frozen=True)
class ProveOutput(Message):
    """Out-record leaf of the operation trace: the graph output digest and its producer."""

    API: ClassVar[str] = "prove_p1_out"
    ROLE: ClassVar[str] = SUBMITTER
    seq: int
    tensor_digest: bytes
    source_path: MerklePath
    producer_path: MerklePath


@dataclass(frozen=True)
class CommitP2(Message):
    API: ClassVar[str] = "commit_p2"
    ROLE: ClassVar[str] = SUBMITTER
    seq: int
    body_root: bytes
    symbolic: tuple[bytes, bytes, bytes]
    n_inputs: int


@dataclass(frozen=True)
class RevealP2(Message):
    API: ClassVar[str] = "reveal_p2"
    ROLE: ClassVar[str] = SUBMITTER
    seq: int
    leaf: bytes
    operand_cells: tuple[bytes, ...]
    symbolic_path: MerklePath
    symbolic_cells: tuple[bytes, ...]


@dataclass(frozen=True)
class DisputeP2(Message):
    """kind: "kind", "operand" (with ``index``) or "result"."""

    API: ClassVar[str] = "dispute_p2"
    ROLE: ClassVar[str] = VERIFIER
    seq: int
    kind: str
    index: int = 0


@dataclass(frozen=True)
class ProveOperand(Message):
    """An operand defined inside the circuit: opening of its defining leaf."""

    API: ClassVar[str] = "prove_operand"
    ROLE: ClassVar[str] = SUBMITTER
    seq: int
    defining_path: MerklePath


@dataclass(frozen=True)
class ProveOperandInput(Message):
    """An operand read from an input tensor: sources cell, tensor digest, element cell."""

    API: ClassVar[str] = "prove_operand_input"
    ROLE: ClassVar[str] = SUBMITTER
    seq: int
    source_path: MerklePath
    digest_path: MerklePath
    element_path: MerklePath


@dataclass(frozen=True)
class ProveP2Output(Message):
    API: ClassVar[str] = "prove_p2_out"
    ROLE: ClassVar[str] = SUBMITTER
    seq: int
    cell: bytes
    var_path: MerklePath
    defining_path: MerklePath


@dataclass(frozen=True)
class Timeout(Message):
    API: ClassVar[str] = "timeout"
    ROLE: ClassVar[str] = ANY
    seq: int


@dataclass(frozen=True)
class Finalize(Message):
    API: ClassVar[str] = "finalize"
    ROLE: ClassVar[str] = ANY
    seq: int


MESSAGE_TYPES: dict[str, type[Message]] = {
    cls.API: cls for cls in (
        SubmitClaim, Challenge, CommitP1, Select, Children, RevealP1, DisputeP1, ProveSource,
        ProveOutput, CommitP2, RevealP2, DisputeP2, ProveOperand, ProveOperandInput,
        ProveP2Output, Timeout, Finalize,
    )
}


# --- JSON form used by the service -----------------------------------------

def to_jsonable(value: Any) -> Any:
    if isinstance(value, bytes):
        return "0x" + value.hex()
    if isinstance(value, MerklePath):
        return {"index": value.index, "n": value.n, "leaf": to_jsonable(value.leaf),
                "siblings": [[to_jsonable(d) for d in g] for g in value.siblings]}
    if dataclasses.is_dataclass(value):
        return {f.name: to_jsonable(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    return value


def _hex(s: str) -> bytes:
    if not isinstance(s, str) or not s.startswith("0x"):
        raise ValueError(f"expected 0x-prefixed hex, got {s!r}")
    return bytes.fromhex(s[2:])


def path_from_json(d: dict[str, Any]) -> MerklePath:
    return MerklePath(int(d["index"]), int(d["n"]), _hex(d["leaf"]),
                      tuple(tuple(_hex(x) for x in g) for g in d["siblings"]))


def message_from_json(api: str, payload: dict[str, Any]) -> Message:
    cls = MESSAGE_TYPES.get(api)
    if cls is None:
        raise ValueError(f"unknown api {api!r}")
    kwargs: dict[str, Any] = {}
    for f in dataclasses.fields(cls):
        if f.name not in payload:
            if f.default is not dataclasses.MISSING:
                continue
            raise ValueError(f"{api}: missing field {f.name!r}")
        v = payload[f.name]
        t = str(f.type)
        if t == "Claim":
            v = Claim(**{k: (_hex(x) if k in ("inputs_digest", "p1s_root", "output_digest") else x)
                         for k, x in v.items()})
        elif t == "MerklePath":
            v = path_from_json(v)
        elif t == "bytes":
            v = _hex(v)
        elif t.startswith("tuple[bytes"):
            v = tuple(_hex(x) for x in v)
        kwargs[f.name] = v
    return cls(**kwargs)


