"""Proof-checker abstraction: theory assembly, step/script checks, caching.

Backends implement :class:`VerifierBackend`.  The deterministic
:class:`MockBackend` replays a :class:`SyntheticSpace` transition table and is
the workhorse for desk-scale testing; a live Isabelle adapter lives in
:mod:`proofsearch.isabelle` behind the same interface.
"""

from __future__ import annotations

import json
import random
import re
import threading
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from time import perf_counter
from typing import Optional, Protocol, runtime_checkable

from .errors import FixtureInvalid, VerifierTimeout
from .script import ProofScript, find_holes, state_fingerprint

#: Default bound on the shared cross-run cache.
GLOBAL_CACHE_CAPACITY = 50_000

_SUBGOALS_RE = re.compile(r"goal \((\d+) subgoals?\):")
_NO_SUBGOALS_RE = re.compile(r"No subgoals!")
_FIRST_SUBGOAL_RE = re.compile(r"^\s*1\.\s+(.*\S)\s*$", re.MULTILINE)


@dataclass(frozen=True)
class CheckResult:
    """Verifier verdict for one theory check."""

    success: bool
    subgoals: Optional[int]
    state_hint: str
    errors: tuple[tuple[int, str], ...]
    elapsed_ms: float
    cache_hit: bool = False

    def to_dict(self) -> dict:
        return {
            "success": self.success,
            "subgoals": self.subgoals,
            "state_hint": self.state_hint,
            "errors": [list(e) for e in self.errors],
            "elapsed_ms": self.elapsed_ms,
            "cache_hit": self.cache_hit,
        }


@dataclass(frozen=True)
class TheoryOutcome:
    """Raw backend outcome; error lines are theory-relative."""

    ok: bool
    output: str
    errors: tuple[tuple[int, str], ...] = ()
    elapsed_ms: Optional[float] = None


@dataclass(frozen=True)
class CounterexampleReport:
    bindings: tuple[tuple[str, str], ...]
    source: str = "mock"


@runtime_checkable
class VerifierBackend(Protocol):
    """Minimal interface a proof checker must provide."""

    def check_theory(self, theory_text: str, timeout_s: float | None = None) -> TheoryOutcome: ...

    def restart(self) -> None: ...

    def refute(
        self, goal_or_state: str, timeout_s: float | None = None
    ) -> Optional[CounterexampleReport]: ...


@dataclass
class RunStats:
    """Per-run counters used to audit logging completeness."""

    verifier_calls: int = 0
    probe_calls: int = 0
    refute_calls: int = 0


class LruCache:
    """Bounded map with least-recently-used eviction; safe for concurrent use."""

    def __init__(self, capacity: int = GLOBAL_CACHE_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._data: OrderedDict = OrderedDict()
        self._lock = threading.Lock()

    def get(self, key):
        with self._lock:
            if key not in self._data:
                return None
            self._data.move_to_end(key)
            return self._data[key]

    def put(self, key, value) -> None:
        with self._lock:
            self._data[key] = value
            self._data.move_to_end(key)
            while len(self._data) > self.capacity:
                self._data.popitem(last=False)

    def __contains__(self, key) -> bool:
        with self._lock:
            return key in self._data

    def __len__(self) -> int:
        with self._lock:
            return len(self._data)


class StepCache:
    """Two-level step cache: a per-run dict over a shared bounded LRU."""

    def __init__(self, global_cache: LruCache | None = None):
        self.per_run: dict = {}
        self.global_cache = global_cache

    def get(self, key) -> Optional[CheckResult]:
        hit = self.per_run.get(key)
        if hit is None and self.global_cache is not None:
            hit = self.global_cache.get(key)
        return hit

    def put(self, key, value: CheckResult) -> None:
        self.per_run[key] = value
        if self.global_cache is not None:
            self.global_cache.put(key, value)

    def __contains__(self, key) -> bool:
        return key in self.per_run or (
            self.global_cache is not None and key in self.global_cache
        )


def cache_key(prefix: "tuple[str, ...] | list[str]", candidate: str | None) -> tuple[str, str]:
    """Key a step by the fingerprint of its joined prefix plus the candidate."""
    return state_fingerprint("\n".join(prefix)), candidate or ""


def assemble_theory(
    prefix: "tuple[str, ...] | list[str]", candidate: str | None, mode: str
) -> str:
    """Wrap a proof prefix plus candidate in a checkable theory.

    Step mode appends ``print_state`` and ``sorry`` so the state after the
    candidate is observable; finish mode appends nothing so acceptance means
    the proof closed.
    """
    if not prefix or not prefix[0].lstrip().startswith(("lemma", "theorem")):
        raise ValueError("prefix must start with a lemma/theorem declaration")
    if mode not in ("step", "finish"):
        raise ValueError(f"unknown mode: {mode}")
    lines = ["theory Scratch imports Main begin"]
    lines.extend(prefix)
    if candidate is not None:
        lines.append(candidate)
    if mode == "step":
        lines.append("print_state")
        lines.append("sorry")
    lines.append("end")
    return "\n".join(lines)


def parse_subgoal_count(state_hint: str) -> Optional[int]:
    """Extract the remaining-subgoal count from a state printout, if any."""
    if _NO_SUBGOALS_RE.search(state_hint):
        return 0
    m = _SUBGOALS_RE.search(state_hint)
    return int(m.group(1)) if m else None


def first_subgoal_text(state_hint: str) -> Optional[str]:
    """The statement of the first subgoal in a state printout, if present."""
    m = _FIRST_SUBGOAL_RE.search(state_hint)
    return m.group(1) if m else None


def check_step(
    backend: VerifierBackend,
    cache: StepCache | None,
    prefix: "tuple[str, ...] | list[str]",
    candidate: str | None,
    mode: str = "step",
    timeout_s: float = 10.0,
    stats: RunStats | None = None,
) -> CheckResult:
    """Check one candidate command against a prefix, through the caches.

    A ``candidate`` of None is a state probe (prefix + state printout).
    Timeouts count as failures but are never cached.
    """
    if stats is not None:
        if candidate is None:
            stats.probe_calls += 1
        else:
            stats.verifier_calls += 1
    key = cache_key(prefix, candidate)
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return replace(hit, cache_hit=True)
    theory = assemble_theory(prefix, candidate, mode)
    t0 = perf_counter()
    try:
        outcome = backend.check_theory(theory, timeout_s)
    except VerifierTimeout:
        elapsed = (perf_counter() - t0) * 1000.0
        return CheckResult(False, None, "", ((-1, "verifier timeout"),), elapsed, False)
    elapsed = outcome.elapsed_ms if outcome.elapsed_ms is not None else (perf_counter() - t0) * 1000.0
    # Theory line 0 is the wrapper; shift error lines to script coordinates.
    errors = tuple((line - 1, msg) for line, msg in outcome.errors)
    result = CheckResult(
        outcome.ok, parse_subgoal_count(outcome.output), outcome.output, errors, elapsed, False
    )
    if cache is not None:
        cache.put(key, result)
    return result


def check_script(
    backend: VerifierBackend,
    script: ProofScript,
    timeout_s: float = 30.0,
    stats: RunStats | None = None,
    probe: bool = False,
) -> CheckResult:
    """Check a whole script as a theory; success means the backend accepted it.

    Holes are allowed: this is the gapped-acceptance check used for outline
    scoring and failure diagnostics.
    """
    if stats is not None:
        if probe:
            stats.probe_calls += 1
        else:
            stats.verifier_calls += 1
    theory = assemble_theory(script.lines, None, "finish")
    t0 = perf_counter()
    try:
        outcome = backend.check_theory(theory, timeout_s)
    except VerifierTimeout:
        elapsed = (perf_counter() - t0) * 1000.0
        return CheckResult(False, None, "", ((-1, "verifier timeout"),), elapsed, False)
    elapsed = outcome.elapsed_ms if outcome.elapsed_ms is not None else (perf_counter() - t0) * 1000.0
    errors = tuple((line - 1, msg) for line, msg in outcome.errors)
    return CheckResult(
        outcome.ok, parse_subgoal_count(outcome.output), outcome.output, errors, elapsed, False
    )


def verify_full(
    backend: VerifierBackend,
    script: ProofScript,
    timeout_s: float = 30.0,
    stats: RunStats | None = None,
) -> CheckResult:
    """Full verification: accepted by the backend and free of holes."""
    result = check_script(backend, script, timeout_s, stats)
    if result.success and find_holes(script):
        return replace(result, success=False)
    return result


def refute(
    backend: VerifierBackend, goal_or_state: str, timeout_s: float = 5.0
) -> Optional[CounterexampleReport]:
    """Ask the backend for a counterexample; timeouts are treated as none."""
    try:
        return backend.refute(goal_or_state, timeout_s)
    except VerifierTimeout:
        return None


# ---------------------------------------------------------------------------
# Synthetic proof spaces and the deterministic mock backend
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpaceNode:
    subgoals: int
    goal: Optional[str] = None
    facts: tuple[str, ...] = ()


@dataclass
class SyntheticSpace:
    """A generated transition table standing in for a live checker."""

    root: str
    nodes: dict[str, SpaceNode]
    edges: dict[tuple[str, str], str]
    refutable: dict[str, tuple[tuple[str, str], ...]] = field(default_factory=dict)

    @property
    def terminals(self) -> set[str]:
        return {nid for nid, node in self.nodes.items() if node.subgoals == 0}

    def node_goal(self, nid: str) -> str:
        node = self.nodes[nid]
        return node.goal if node.goal is not None else nid

    def goal_to_node(self) -> dict[str, str]:
        # Goal texts need not be unique; the root wins collisions, then the
        # first node in declaration order.
        mapping: dict[str, str] = {self.node_goal(self.root): self.root}
        for nid in self.nodes:
            mapping.setdefault(self.node_goal(nid), nid)
        return mapping

    def validate(self) -> "SyntheticSpace":
        if self.root not in self.nodes:
            raise FixtureInvalid(f"root {self.root!r} is not a node")
        for (src, cmd), dst in self.edges.items():
            if src not in self.nodes or dst not in self.nodes:
                raise FixtureInvalid(f"edge ({src!r}, {cmd!r}) -> {dst!r} references unknown node")
        for nid, node in self.nodes.items():
            if node.subgoals < 0:
                raise FixtureInvalid(f"node {nid!r} has negative subgoal count")
        for goal, bindings in self.refutable.items():
            if not bindings:
                raise FixtureInvalid(f"refutable entry {goal!r} has no bindings")
        return self

    def to_json(self) -> dict:
        nodes = {}
        for nid, node in sorted(self.nodes.items()):
            entry: dict = {"subgoals": node.subgoals}
            if node.goal is not None:
                entry["goal"] = node.goal
            if node.facts:
                entry["facts"] = list(node.facts)
            nodes[nid] = entry
        edges = [
            {"from": src, "cmd": cmd, "to": dst}
            for (src, cmd), dst in sorted(self.edges.items())
        ]
        doc: dict = {"root": self.root, "nodes": nodes, "edges": edges}
        if self.refutable:
            doc["refutable"] = {g: [list(b) for b in bs] for g, bs in sorted(self.refutable.items())}
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "SyntheticSpace":
        try:
            nodes = {
                nid: SpaceNode(
                    subgoals=int(entry["subgoals"]),
                    goal=entry.get("goal"),
                    facts=tuple(entry.get("facts", ())),
                )
                for nid, entry in doc["nodes"].items()
            }
            edges = {(e["from"], e["cmd"]): e["to"] for e in doc["edges"]}
            refutable = {
                goal: tuple((str(v), str(x)) for v, x in bindings)
                for goal, bindings in doc.get("refutable", {}).items()
            }
            return cls(doc["root"], nodes, edges, refutable).validate()
        except (KeyError, TypeError, ValueError) as exc:
            raise FixtureInvalid(f"bad synthetic-space document: {exc}") from exc

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "SyntheticSpace":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


_GOAL_IN_LEMMA_RE = re.compile(r'^\s*(?:lemma|theorem)\b[^"]*"(.+)"')
_SKIP_LINES = {"", "begin"}


def render_state(space: SyntheticSpace, nid: str) -> str:
    """Render a node as a state printout matching the subgoal grammar."""
    node = space.nodes[nid]
    lines = [f"STATE {nid}"]
    if node.facts:
        lines.append("facts:")
        lines.extend(f"  {name}" for name in node.facts)
    if node.subgoals == 0:
        lines.append("No subgoals!")
    else:
        plural = "subgoal" if node.subgoals == 1 else "subgoals"
        lines.append(f"goal ({node.subgoals} {plural}):")
        lines.append(f" 1. {space.node_goal(nid)}")
    return "\n".join(lines)


class MockBackend:
    """Deterministic VerifierBackend replaying a synthetic transition table.

    A theory walk starts at the node whose goal matches the lemma header
    (unknown goals start at the root); each non-structural line must be a
    valid outgoing edge.  ``sorry`` marks a gap and is always accepted; a
    theory with no gap must end on a node with zero subgoals.
    """

    def __init__(self, space: SyntheticSpace):
        self.space = space.validate()
        self._goal_map = space.goal_to_node()
        self.calls = 0
        self.restarts = 0

    def check_theory(self, theory_text: str, timeout_s: float | None = None) -> TheoryOutcome:
        self.calls += 1
        cur = self.space.root
        saw_sorry = False
        last_state = ""
        lines = theory_text.split("\n")
        for i, raw in enumerate(lines):
            line = raw.strip()
            if i == 0 and line.startswith("theory"):
                continue
            if line in _SKIP_LINES:
                continue
            if line == "end":
                break
            m = _GOAL_IN_LEMMA_RE.match(raw)
            if m is not None:
                cur = self._goal_map.get(m.group(1), self.space.root)
                continue
            if line == "print_state":
                last_state = render_state(self.space, cur)
                continue
            if line == "sorry":
                saw_sorry = True
                continue
            nxt = self.space.edges.get((cur, line))
            if nxt is None:
                return TheoryOutcome(
                    False, last_state, ((i, f"no such step: {line}"),), elapsed_ms=0.0
                )
            cur = nxt
        if not saw_sorry and self.space.nodes[cur].subgoals != 0:
            end_line = next((i for i, ln in enumerate(lines) if ln.strip() == "end"), len(lines) - 1)
            return TheoryOutcome(
                False, last_state, ((end_line, "proof incomplete"),), elapsed_ms=0.0
            )
        return TheoryOutcome(True, last_state, (), elapsed_ms=0.0)

    def restart(self) -> None:
        self.restarts += 1

    def refute(
        self, goal_or_state: str, timeout_s: float | None = None
    ) -> Optional[CounterexampleReport]:
        bindings = self.space.refutable.get(goal_or_state.strip())
        if bindings is None:
            return None
        return CounterexampleReport(tuple(bindings), source="mock")


def mock_from_fixture(fixture: "SyntheticSpace | dict") -> MockBackend:
    """Build the deterministic mock backend from a space or its JSON document."""
    space = fixture if isinstance(fixture, SyntheticSpace) else SyntheticSpace.from_json(fixture)
    return MockBackend(space)


#: Hard bound on generated space size, to keep fixtures desk-scale.
_MAX_NODES = 4000


def generate_space(
    depth: int, branching: int, num_solutions: int, seed: int
) -> SyntheticSpace:
    """Generate a pseudo-random proof space with a known solution count.

    The state graph is a ``branching``-ary tree of the given depth whose
    subgoal counts weakly decrease away from the root, plus ``num_solutions``
    finisher edges into fresh terminal nodes.  Nodes on a solution path are
    pinned to one subgoal (every other node has at least two), so a beam as
    wide as the branching factor always ranks solution states first and the
    prover's reachability coincides with plain breadth-first search.
    """
    if depth < 1 or branching < 1 or num_solutions < 0:
        raise ValueError("need depth >= 1, branching >= 1, num_solutions >= 0")
    rng = random.Random(seed)
    nodes: dict[str, SpaceNode] = {}
    edges: dict[tuple[str, str], str] = {}
    counts: dict[str, int] = {}
    parents: dict[str, str] = {}
    depths: dict[str, int] = {"n0": 0}
    counts["n0"] = rng.randint(2, 4)
    level = ["n0"]
    serial = 1
    for d in range(depth):
        nxt = []
        for parent in level:
            for j in range(branching):
                if serial >= _MAX_NODES:
                    break
                child = f"n{serial}"
                serial += 1
                counts[child] = max(2, counts[parent] + rng.choice((-1, 0)))
                parents[child] = parent
                depths[child] = d + 1
                edges[(parent, f"apply s{j}")] = child
                nxt.append(child)
        level = nxt

    internal = [nid for nid, d in depths.items() if d <= depth - 1]
    carved = rng.sample(internal, min(num_solutions, len(internal)))
    for i, nid in enumerate(sorted(carved)):
        cur = nid
        while True:
            counts[cur] = 1
            if cur == "n0":
                break
            cur = parents[cur]
        terminal = f"t{i}"
        counts[terminal] = 0
        depths[terminal] = depths[nid] + 1
        edges[(nid, f"by w{i}")] = terminal

    for nid, count in counts.items():
        nodes[nid] = SpaceNode(subgoals=count)
    return SyntheticSpace("n0", nodes, edges).validate()
