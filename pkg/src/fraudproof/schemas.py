"""Request and response bodies of the HTTP service."""

from __future__ import annotations

from typing import Any, Literal

from pydantic import BaseModel, Field

from .numerics.corners import CORNER_SEED

ModelRef = str | dict[str, Any]  # corpus name or model document


class ModelInputs(BaseModel):
    model: ModelRef
    inputs: dict[str, Any] | None = Field(None, description="input document; seeded inputs when absent")
    seed: int = 0
    k: int = Field(32, ge=2)


class LowerRequest(BaseModel):
    model: ModelRef
    node: str
    format: Literal["text", "json"] = "text"


class LowerResponse(BaseModel):
    node: str
    kind: str
    n_inputs: int
    n_vertices: int
    n_outputs: int
    dedup_key: str
    text: str | None = None
    vis: list[dict[str, Any]] | None = None


class EvalRequest(ModelInputs):
    trace: Literal["none", "op", "bop"] = "none"
    node: str | None = None
    threads: int | Literal["max"] = 1


class EvalResponse(BaseModel):
    model: str
    outputs: dict[str, Any]
    digest: str
    output_digests: list[str]
    trace: list[dict[str, Any]] | None = None


class CommitResponse(BaseModel):
    model: str
    k: int
    n_ops: int
    p1s_root: str
    p1c_root: str
    inputs_digest: str
    output_digest: str
    op_leaves: list[str]


class DisputeRequest(ModelInputs):
    quorum: int = Field(2, ge=2)
    faults: list[str] = Field(default_factory=list)
    t_v: int | None = None
    t_op: int = Field(10, ge=10)
    t_bop: int = Field(10, ge=10)
    stall_verifiers: bool = False
    late_challenge: bool = False
    stall_submitter: bool = False
    transcript: bool = True


class ProfileRequest(BaseModel):
    model: ModelRef | None = None
    per_op: bool = True


class SweepKRequest(BaseModel):
    model: str = "chain-1024"
    ks: list[int] = Field(default_factory=lambda: [2, 4, 8, 16, 32, 64])
    seed: int = 0


class CornersRequest(BaseModel):
    kind: str
    seed: int = CORNER_SEED


Suite = Literal["bop", "op", "native", "faults", "malicious", "bounds", "memory", "rounds"]


class ConsistencyRequest(BaseModel):
    suites: list[Suite] = Field(default_factory=lambda: ["bop", "op", "native"])
    quick: bool = False
    seed: int = 0


class SuiteResult(BaseModel):
    suite: str
    ok: bool
    seconds: float
    summary: dict[str, Any]


class ConsistencyResponse(BaseModel):
    ok: bool
    results: list[SuiteResult]


# --- live arbitration --------------------------------------------------------

class OpenClaimRequest(ModelInputs):
    """The quorum's agreed setup: model, inputs and members; the service records the endorsement."""

    task_id: str
    quorum: list[str] = Field(min_length=2)
    t_v: int | None = None
    t_op: int = Field(10, ge=10)
    t_bop: int = Field(10, ge=10)


class MessageRequest(BaseModel):
    sender: str
    api: str
    payload: dict[str, Any]
    tick: int = Field(ge=0)


class GameState(BaseModel):
    task_id: str
    phase: str
    seq: int
    turn: str | None
    active_verifier: str | None
    failed: list[str]
    deadline: int | None
    verdict: dict[str, Any] | None
    extra: dict[str, Any] = Field(default_factory=dict)
