"""Bounded beam search over proof scripts.

Each round expands every beam entry with proposer candidates, checks them
through the step cache, then forms the next beam by the lexicographic
(subgoals, script length) order with state-fingerprint deduplication.  A
verified finisher ends the search; depth, beam width and a wall-clock budget
bound it.
"""

from __future__ import annotations

import re
import uuid
from dataclasses import dataclass
from time import monotonic
from typing import Optional, Sequence

from .datalog import RunLogger
from .errors import BackendUnavailable
from .premises import PremiseIndex, RetrievalResult, premise_stats
from .premises import rerank as rerank_pool
from .premises import select as select_premises
from .proposer import ProposalContext, ProposerBackend, propose
from .rerank import RerankModel, featurize, predict
from .script import ProofScript, parse_script, state_fingerprint
from .verifier import (
    LruCache,
    RunStats,
    StepCache,
    VerifierBackend,
    cache_key,
    check_step,
    first_subgoal_text,
    refute,
    verify_full,
)

#: Rank value for beam entries whose subgoal count is unknown.
SENTINEL_SUBGOALS = 1_000_000


@dataclass
class BeamEntry:
    """One live search state: accepted prefix, score, state hint, subgoals."""

    script: ProofScript
    score: float
    state_hint: str
    subgoals: int = SENTINEL_SUBGOALS


@dataclass
class SearchConfig:
    beam_width: int = 4
    max_depth: int = 8
    budget_s: float = 120.0
    candidates_per_call: int = 6
    reranker_weight: float = 2.0
    refute_interval: int = 3
    finish_trigger: int = 2
    step_timeout_s: float = 10.0
    premise_k: int = 8

    def validate(self) -> "SearchConfig":
        if self.beam_width < 1 or self.max_depth < 1:
            raise ValueError("beam width and depth must be >= 1")
        if self.budget_s <= 0:
            raise ValueError("budget must be positive")
        if self.reranker_weight < 0:
            raise ValueError("reranker weight must be >= 0")
        return self


@dataclass
class ProofResult:
    solved: bool
    script: ProofScript
    depth_reached: int
    expansions: int
    elapsed_s: float
    run_id: str = ""


def expand_beam(successes: Sequence[BeamEntry], beam_width: int) -> list[BeamEntry]:
    """Next beam: stable (subgoals, length) sort, fingerprint dedup, truncate."""
    ordered = sorted(successes, key=lambda e: (e.subgoals, len(e.script.lines)))
    out: list[BeamEntry] = []
    seen: set[str] = set()
    for entry in ordered:
        fp = state_fingerprint(entry.state_hint)
        if fp in seen:
            continue
        seen.add(fp)
        out.append(entry)
        if len(out) >= beam_width:
            break
    return out


@dataclass
class OrderedCandidate:
    text: str
    key: float
    features: Optional[object] = None
    f_score: Optional[float] = None


def order_candidates(
    candidates: Sequence[str],
    ctx: ProposalContext,
    reranker: Optional[RerankModel] = None,
    weight: float = 0.0,
    retrieval: Optional[RetrievalResult] = None,
    elapsed_s: float = 0.0,
    cache_probe=None,
) -> list[OrderedCandidate]:
    """Order candidates by proposer position minus the weighted model score.

    Without a reranker the key is the position index, so the proposer order
    is preserved; the sort is stable either way.
    """
    if weight < 0:
        raise ValueError("weight must be >= 0")
    keyed: list[OrderedCandidate] = []
    for i, cand in enumerate(candidates):
        stats4 = premise_stats(ctx.goal, retrieval, cand) if retrieval is not None else None
        cached = bool(cache_probe(cand)) if cache_probe is not None else False
        x = featurize(ctx, cand, stats4, elapsed_s=elapsed_s, cache_hit=cached)
        key = float(i)
        f_score = None
        if reranker is not None:
            f_score = predict(reranker, x)
            key = i - weight * f_score
        keyed.append(OrderedCandidate(cand, key, x, f_score))
    keyed.sort(key=lambda c: c.key)
    return keyed


_QUANTIFIER_RE = re.compile(r"[∀∃]|\bAll\b|\bEx\b")
_BOOLEAN_RE = re.compile(r"[∧∨¬⟶]")


def should_refute(goal: str, state_hint: str, round_idx: int, interval: int) -> bool:
    """Refutation gate: right round and a quantified/Boolean-shaped goal."""
    if interval < 1:
        raise ValueError("interval must be >= 1")
    if round_idx % interval != 0:
        return False
    text = goal + "\n" + state_hint
    return bool(_QUANTIFIER_RE.search(text) or _BOOLEAN_RE.search(text))


def _n_or_none(subgoals: int) -> Optional[int]:
    return None if subgoals == SENTINEL_SUBGOALS else subgoals


def prove(
    goal: str,
    cfg: SearchConfig,
    backend: VerifierBackend,
    proposer: ProposerBackend,
    reranker: Optional[RerankModel] = None,
    premise_index: Optional[PremiseIndex] = None,
    *,
    global_cache: Optional[LruCache] = None,
    logger: Optional[RunLogger] = None,
    stats: Optional[RunStats] = None,
    log_run: bool = True,
) -> ProofResult:
    """Search for a verified proof of ``goal``; failure is ``solved=False``.

    The beam starts from the bare lemma script (an uncounted state probe
    fills in the root state).  Per round, each entry gathers step candidates
    (finish candidates too once its subgoal count is at or below the
    trigger), orders them with the optional reranker, prunes refutable
    branches at the configured interval, and checks candidates until the
    budget, depth, or a verified finisher stops the search.  Every candidate
    evaluation is logged as one attempt.
    """
    cfg.validate()
    if not goal.strip():
        raise ValueError("goal must be non-empty")
    t0 = monotonic()
    stats = stats if stats is not None else RunStats()
    cache = StepCache(global_cache)
    run_id = logger.run_id if logger is not None else uuid.uuid4().hex

    root_script = parse_script(f'lemma "{goal}"')
    probe = check_step(
        backend, cache, root_script.lines, None, "step", cfg.step_timeout_s, stats=stats
    )
    root_n = probe.subgoals if probe.success and probe.subgoals is not None else SENTINEL_SUBGOALS
    beam = [BeamEntry(root_script, 0.0, probe.state_hint if probe.success else "", root_n)]

    best = beam[0]
    stagnation = 0
    expansions = 0
    depth_reached = 0
    solved: Optional[ProofResult] = None

    def time_left() -> float:
        return cfg.budget_s - (monotonic() - t0)

    for round_idx in range(1, cfg.max_depth + 1):
        if time_left() <= 0 or solved is not None:
            break
        successes: list[BeamEntry] = []
        prev_min = min(e.subgoals for e in beam)
        for entry in beam:
            if time_left() <= 0 or solved is not None:
                break
            if should_refute(goal, entry.state_hint, round_idx, cfg.refute_interval):
                target = first_subgoal_text(entry.state_hint) or goal
                stats.refute_calls += 1
                if refute(backend, target, cfg.step_timeout_s) is not None:
                    continue  # refutable branch: prune without expanding
            retrieval = None
            facts: tuple[str, ...] = ()
            if premise_index is not None:
                query = goal
                sub = first_subgoal_text(entry.state_hint)
                if sub:
                    query = f"{goal} {sub}"
                pool = select_premises(premise_index, query, cfg.premise_k)
                retrieval = rerank_pool(premise_index, query, pool, 0)
                facts = tuple(eid for eid, _, _ in retrieval.ranked)
            ctx = ProposalContext(
                goal=goal,
                accepted_steps=tuple(entry.script.lines[1:]),
                state_hint=entry.state_hint,
                helpful_facts=facts,
                stagnation=stagnation,
                depth=round_idx,
            )
            batches: list[tuple[str, list[str]]] = []
            if entry.subgoals <= cfg.finish_trigger:
                batches.append(("finish", _safe_propose(proposer, ctx, "finish", cfg)))
            batches.append(("step", _safe_propose(proposer, ctx, "step", cfg)))
            for mode, cands in batches:
                if solved is not None:
                    break
                probe_fn = lambda c: cache_key(entry.script.lines, c) in cache
                ordered = order_candidates(
                    cands, ctx, reranker, cfg.reranker_weight, retrieval,
                    elapsed_s=monotonic() - t0, cache_probe=probe_fn,
                )
                for cand in ordered:
                    if time_left() <= 0:
                        break
                    res = check_step(
                        backend, cache, entry.script.lines, cand.text, mode,
                        cfg.step_timeout_s, stats=stats,
                    )
                    expansions += 1
                    new_script = entry.script.with_line(cand.text)
                    if logger is not None:
                        logger.attempt(
                            kind="finisher" if mode == "finish" else "step",
                            prefix_fp=state_fingerprint(entry.script.text),
                            action=cand.text,
                            success=res.success,
                            n_before=_n_or_none(entry.subgoals),
                            n_after=res.subgoals,
                            elapsed_ms=res.elapsed_ms,
                            cache_hit=res.cache_hit,
                            depth=round_idx,
                            x=[float(v) for v in cand.features],
                            pool=list(facts),
                            score_key=cand.key,
                            f_score=cand.f_score,
                        )
                    if not res.success:
                        continue
                    if mode == "finish":
                        solved = ProofResult(
                            True, new_script, round_idx, expansions, monotonic() - t0, run_id
                        )
                        break
                    n = res.subgoals if res.subgoals is not None else SENTINEL_SUBGOALS
                    successes.append(BeamEntry(new_script, cand.key, res.state_hint, n))
        if solved is not None:
            break
        beam = expand_beam(successes, cfg.beam_width)
        depth_reached = round_idx
        if not beam:
            break
        new_min = min(e.subgoals for e in beam)
        if new_min < prev_min:
            stagnation = 0
        else:
            stagnation += 1
        top = beam[0]
        if (top.subgoals, len(top.script.lines)) < (best.subgoals, len(best.script.lines)):
            best = top

    result = solved or ProofResult(
        False, best.script, depth_reached, expansions, monotonic() - t0, run_id
    )
    if logger is not None and log_run:
        logger.run(
            goal_id=state_fingerprint(goal)[:16],
            mode="stepwise",
            config={"beam": cfg.beam_width, "depth": cfg.max_depth, "budget_s": cfg.budget_s},
            models={
                "proposer": type(proposer).__name__,
                "reranker": reranker.kind if reranker else None,
                "premises": "tfidf" if premise_index is not None else None,
            },
            runtime_s=result.elapsed_s,
            timeout=not result.solved and time_left() <= 0,
            success=result.solved,
            proof=result.script.text if result.solved else None,
            stats={"depth_reached": result.depth_reached, "expansions": result.expansions},
        )
    return result


def _safe_propose(
    proposer: ProposerBackend, ctx: ProposalContext, mode: str, cfg: SearchConfig
) -> list[str]:
    try:
        return propose(proposer, ctx, mode, cfg.candidates_per_call)
    except BackendUnavailable:
        return []


_FACT_CALL_RE = re.compile(r"^(\s*)by \((simp add:|metis)\s+([^)]*)\)\s*$")
_APPLY_RE = re.compile(r"^\s*apply\b")

_ONE_LINERS = ("by simp", "by auto", "by blast")


def minimise(
    script: ProofScript, backend: VerifierBackend, budget_s: float = 30.0
) -> ProofScript:
    """Greedy proof shrinking; the output always verifies.

    Passes, in order: whole-proof one-liners, dropping unused facts from
    ``simp add:``/``metis`` calls, deleting redundant apply lines, then
    one-liners again.  Stops early when the budget runs out.
    """
    deadline = monotonic() + budget_s

    def verifies(s: ProofScript) -> bool:
        return monotonic() < deadline and verify_full(backend, s).success

    def try_one_liners(s: ProofScript) -> Optional[ProofScript]:
        for one in _ONE_LINERS:
            cand = ProofScript((s.lines[0], one), s.goal)
            if len(cand.lines) <= len(s.lines) and verifies(cand):
                return cand
        return None

    best = script
    shrunk = try_one_liners(best)
    if shrunk is not None:
        return shrunk

    # Drop facts one at a time from simp/metis calls.
    changed = True
    while changed and monotonic() < deadline:
        changed = False
        for i, line in enumerate(best.lines):
            m = _FACT_CALL_RE.match(line)
            if not m:
                continue
            indent, method, fact_text = m.groups()
            facts = fact_text.split()
            for j in range(len(facts)):
                remaining = facts[:j] + facts[j + 1 :]
                if remaining:
                    new_line = f"{indent}by ({method} {' '.join(remaining)})"
                else:
                    new_line = f"{indent}by {method.split()[0].rstrip(':')}"
                cand = ProofScript(
                    best.lines[:i] + (new_line,) + best.lines[i + 1 :], best.goal
                )
                if verifies(cand):
                    best = cand
                    changed = True
                    break
            if changed:
                break

    # Delete redundant intermediate apply lines.
    i = 1
    while i < len(best.lines) and monotonic() < deadline:
        if _APPLY_RE.match(best.lines[i]):
            cand = ProofScript(best.lines[:i] + best.lines[i + 1 :], best.goal)
            if verifies(cand):
                best = cand
                continue
        i += 1

    shrunk = try_one_liners(best)
    return shrunk if shrunk is not None else best


_SINGLE_METHOD_RE = re.compile(r"^\s*(?:by\s+(?P<by>\S.*)|apply\s+(?P<apply>\S.*))$")


def to_isar(
    script: ProofScript, backend: VerifierBackend, timeout_s: float = 30.0
) -> ProofScript:
    """Convert a single-method apply-style proof into an Isar skeleton.

    Only fires when the whole chain is one method and the converted script
    still verifies; anything else returns the original unchanged.
    """
    body = [ln for ln in script.lines[1:] if ln.strip()]
    if any(ln.lstrip().startswith("proof") for ln in script.lines):
        return script
    if len(body) != 1:
        return script
    m = _SINGLE_METHOD_RE.match(body[0])
    if not m:
        return script
    method = m.group("by") or m.group("apply")
    cand = ProofScript(
        (script.lines[0], "proof -", f"  show ?thesis by {method}", "qed"), script.goal
    )
    if verify_full(backend, cand, timeout_s).success:
        return cand
    return script
