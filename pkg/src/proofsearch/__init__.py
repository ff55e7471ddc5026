"""Verifier-in-the-loop proof search for Isar-style proof scripts.

Two cooperating layers: a stepwise beam prover that proposes and checks
individual proof commands, and a planner that samples structured outlines
and eliminates the remaining gaps by fill and staged repair.  All external
dependencies (the proof checker, the proposal model) sit behind pluggable
interfaces with deterministic mock implementations, so the whole pipeline
runs and tests at desk scale.
"""

from .planner import Components, PlannerConfig, PlanResult, plan_auto
from .script import ProofScript, find_holes, parse_script
from .stepwise import ProofResult, SearchConfig, prove
from .verifier import MockBackend, SyntheticSpace, generate_space

__all__ = [
    "Components",
    "MockBackend",
    "PlanResult",
    "PlannerConfig",
    "ProofResult",
    "ProofScript",
    "SearchConfig",
    "SyntheticSpace",
    "find_holes",
    "generate_space",
    "parse_script",
    "plan_auto",
    "prove",
]
