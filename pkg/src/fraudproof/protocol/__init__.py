"""Two-phase dispute protocol: arbitrator state machine, parties and a tick-level driver."""

from .arbitrator import Arbitrator, ClaimGame, Phase, ProtocolError, Timeouts, Verdict
from .parties import STRATEGIES, HonestVerifier, MaliciousVerifier, Submitter, TraceView
from .simulation import FaultSpec, SimResult, World, make_world, run_game, simulate, tick_bound

__all__ = [
    "Arbitrator", "ClaimGame", "Phase", "ProtocolError", "Timeouts", "Verdict", "STRATEGIES",
    "HonestVerifier", "MaliciousVerifier", "Submitter", "TraceView", "FaultSpec", "SimResult", "World",
    "make_world", "run_game", "simulate", "tick_bound",
]
