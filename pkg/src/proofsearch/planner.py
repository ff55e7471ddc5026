"""Outline planning, hole filling, and staged block-level repair.

The driver samples diversified Isar outlines, scores them, then works the
best one hole by hole: a shallow stepwise-prover fill first, then a bounded
counterexample-guided repair loop over enclosing blocks, escalating from
micro-blocks to case blocks/subproofs and finally to whole-proof
regeneration.  Commits pass the full verification gate; everything else is
normalized back to a script whose failures are explicit holes.
"""

from __future__ import annotations

import logging
import re
import uuid
from collections import deque
from dataclasses import dataclass, field
from time import monotonic
from typing import Optional, Sequence

from .datalog import RunLogger
from .hints import (
    DEFAULT_K_CTX,
    DEFAULT_K_HINT,
    DEFAULT_K_LEX,
    HintLexicon,
    HintSet,
    combine_hints,
    context_hints,
    hint_bonus,
    lexicon_hints,
)
from .premises import PremiseIndex
from .proposer import ProposerBackend
from .rerank import RerankModel
from .script import (
    BlockSpan,
    Hole,
    ProofScript,
    enclosing_block,
    find_holes,
    is_apply_legal,
    normalize_outline,
    open_minimal_sorries,
    parse_script,
    replace_span,
    state_fingerprint,
    strip_to_type,
)
from .errors import EmptyAfterStrip, Unsalvageable, VerifierTimeout
from .stepwise import SearchConfig, prove
from .verifier import (
    LruCache,
    RunStats,
    VerifierBackend,
    assemble_theory,
    check_script,
    first_subgoal_text,
    refute,
    verify_full,
)

log = logging.getLogger(__name__)

OUTLINE_SYSTEM_PROMPT = (
    "Produce one structured Isar proof outline for the goal.\n"
    "Reply with a single `lemma \"<goal>\"` block followed by its proof.\n"
    "Use `sorry` for any step you cannot justify. No prose."
)

REPAIR_SYSTEM_PROMPT = (
    "Rewrite the failing Isar block.\n"
    "Reply with only the replacement block, no prose, no code fences."
)


@dataclass
class PlannerConfig:
    mode: str = "auto"
    samples_per_temp: int = 3
    temperatures: tuple[float, ...] = (0.35, 0.55, 0.85)
    enforce_holes: bool = True
    alpha: float = 10.0
    beta: float = 1.0
    gamma: float = 1.0
    c1: int = 2
    c2: int = 3
    fill_budget_s: float = 15.0
    fill_beam: int = 2
    fill_depth: int = 3
    repair_budget_s: float = 20.0
    repair_max_proposals: int = 6
    global_budget_s: float = 120.0
    k_ctx: int = DEFAULT_K_CTX
    k_lex: int = DEFAULT_K_LEX
    k_hint: int = DEFAULT_K_HINT
    ban_cap: int = 8
    regen_cap: int = 2
    anchor_window: int = 20
    verify_timeout_s: float = 30.0

    def validate(self) -> "PlannerConfig":
        if self.mode not in ("outline", "auto"):
            raise ValueError(f"unknown planner mode: {self.mode}")
        if self.c1 < 1 or self.c2 < 1:
            raise ValueError("stage caps must be >= 1")
        if not self.temperatures:
            raise ValueError("need at least one sampling temperature")
        if min(self.fill_budget_s, self.repair_budget_s, self.global_budget_s) <= 0:
            raise ValueError("budgets must be positive")
        return self


@dataclass
class PlannerState:
    """Per-run repair bookkeeping keyed by stable hole ids."""

    stage: dict[str, int] = field(default_factory=dict)
    tries: dict[tuple[str, int], int] = field(default_factory=dict)
    focus: Optional[str] = None
    bans: dict[tuple[str, str], deque] = field(default_factory=dict)
    ban_cap: int = 8
    regen_trigger: bool = False

    def ban_list(self, hid: str, kind: str) -> deque:
        key = (hid, kind)
        if key not in self.bans:
            self.bans[key] = deque(maxlen=self.ban_cap)
        return self.bans[key]


@dataclass
class PlanResult:
    solved: bool
    script: ProofScript
    outlines_sampled: int = 0
    fills_attempted: int = 0
    repairs_attempted: int = 0
    regenerations: int = 0
    elapsed_s: float = 0.0
    run_id: str = ""


@dataclass
class FillOutcome:
    kind: str  # "verified" | "partial" | "no_change"
    script: ProofScript
    opened: list[Hole] = field(default_factory=list)


@dataclass
class RepairOutcome:
    kind: str  # "verified" | "partial" | "no_change"
    script: ProofScript
    tag: str = ""


@dataclass
class Components:
    """Shared machinery a planner run operates on."""

    backend: VerifierBackend
    proposer: ProposerBackend
    outline_proposer: Optional[ProposerBackend] = None
    repair_proposer: Optional[ProposerBackend] = None
    reranker: Optional[RerankModel] = None
    premise_index: Optional[PremiseIndex] = None
    lexicon: Optional[HintLexicon] = None
    global_cache: Optional[LruCache] = None
    logger: Optional[RunLogger] = None
    stats: Optional[RunStats] = None

    def for_outlines(self) -> ProposerBackend:
        return self.outline_proposer or self.proposer

    def for_repair(self) -> ProposerBackend:
        return self.repair_proposer or self.outline_proposer or self.proposer


# ---------------------------------------------------------------------------
# Outline sampling and scoring
# ---------------------------------------------------------------------------


def _outline_user_prompt(goal: str, hints: HintSet) -> str:
    user = f"GOAL:\n{goal}"
    if len(hints):
        user += f"\n\nHINTS: Prefer using {', '.join(hints.ids)} if applicable."
    return user


def sample_outlines(
    goal: str, hints: HintSet, cfg: PlannerConfig, proposer: ProposerBackend
) -> list[ProofScript]:
    """Diversified sampling: up to ``samples_per_temp`` per temperature,
    normalized and deduplicated by whole-script fingerprint."""
    user = _outline_user_prompt(goal, hints)
    outlines: list[ProofScript] = []
    seen: set[str] = set()
    for temp in cfg.temperatures:
        for _ in range(cfg.samples_per_temp):
            raw = proposer.complete(OUTLINE_SYSTEM_PROMPT, user, temp, 1)
            if not raw.strip():
                continue
            try:
                outline = normalize_outline(raw, goal, cfg.enforce_holes)
            except Unsalvageable:
                continue
            fp = state_fingerprint(outline.text)
            if fp not in seen:
                seen.add(fp)
                outlines.append(outline)
    return outlines


def _score_outline_detail(
    outline: ProofScript,
    backend: VerifierBackend,
    hints: HintSet,
    weights: tuple[float, float, float],
    k_hint: int,
    timeout_s: float = 30.0,
    stats: Optional[RunStats] = None,
) -> tuple[float, bool]:
    alpha, beta, gamma = weights
    result = check_script(backend, outline, timeout_s, stats)
    clean = result.success
    holes = len(find_holes(outline))
    bonus = hint_bonus(outline, hints, k_hint)
    return alpha * (1.0 if clean else 0.0) - beta * holes + gamma * bonus, clean


def score_outline(
    outline: ProofScript,
    backend: VerifierBackend,
    hints: HintSet,
    weights: tuple[float, float, float] = (10.0, 1.0, 1.0),
    k_hint: int = DEFAULT_K_HINT,
    timeout_s: float = 30.0,
) -> float:
    """Composite outline score: clean-check bonus minus holes plus hint usage."""
    score, _ = _score_outline_detail(outline, backend, hints, weights, k_hint, timeout_s)
    return score


# ---------------------------------------------------------------------------
# State probes (diagnostics; not logged as attempts)
# ---------------------------------------------------------------------------


def _state_at_hole(
    backend: VerifierBackend, script: ProofScript, hole: Hole, timeout_s: float = 10.0
) -> str:
    prefix = script.lines[: hole.start_line]
    try:
        outcome = backend.check_theory(assemble_theory(prefix, None, "step"), timeout_s)
    except Exception as exc:
        log.debug("state probe failed at hole %s: %s", hole.hid, exc)
        return ""
    return outcome.output if outcome.ok else ""


def effective_goal(
    backend: VerifierBackend,
    script: ProofScript,
    hole: Hole,
    original_goal: str,
    timeout_s: float = 10.0,
) -> str:
    """The active subgoal at the hole, falling back to the original goal."""
    state = _state_at_hole(backend, script, hole, timeout_s)
    return first_subgoal_text(state) or original_goal


def earliest_failure_line(
    backend: VerifierBackend, script: ProofScript, hole: Hole, timeout_s: float = 30.0
) -> int:
    """Smallest failing line at or before the hole, clamped into [1, hole]."""
    result = check_script(backend, script, timeout_s)
    earlier = [line for line, _ in result.errors if 0 <= line <= hole.start_line]
    anchor = min(earlier) if earlier else hole.start_line
    return max(1, min(anchor, hole.start_line))


def counterexample_hints(backend: VerifierBackend, state: str) -> list[str]:
    """Formatted counterexample bindings for the state's first subgoal."""
    target = first_subgoal_text(state) or state.strip()
    if not target:
        return []
    report = refute(backend, target)
    if report is None:
        return []
    return [f"COUNTEREXAMPLE: {var} = {val}" for var, val in report.bindings]


# ---------------------------------------------------------------------------
# Fill
# ---------------------------------------------------------------------------


def _failing_tactic_lines(script: ProofScript, errors) -> list[int]:
    tactic = re.compile(r"^\s*(?:apply\b|by\b|done\s*$)")
    return [
        line
        for line, _ in errors
        if 0 < line < len(script.lines) and tactic.match(script.lines[line])
    ]


def fill_hole(
    script: ProofScript,
    hole: Hole,
    goal: str,
    comps: Components,
    cfg: PlannerConfig,
) -> FillOutcome:
    """Fill one hole by running the stepwise prover on its effective goal.

    A finisher splices in and must pass full verification to count as
    verified; apply-only progress is spliced with a fresh hole (wrapped in a
    subproof where bare apply steps are not admissible) and always reported
    as partial after normalization.
    """
    backend = comps.backend
    stats = comps.stats
    try:
        eff = effective_goal(backend, script, hole, goal)
        sub_cfg = SearchConfig(
            beam_width=cfg.fill_beam,
            max_depth=cfg.fill_depth,
            budget_s=cfg.fill_budget_s,
            step_timeout_s=min(10.0, cfg.fill_budget_s),
        )
        result = prove(
            eff,
            sub_cfg,
            backend,
            comps.proposer,
            comps.reranker,
            comps.premise_index,
            global_cache=comps.global_cache,
            logger=comps.logger,
            stats=stats,
            log_run=False,
        )
    except VerifierTimeout:
        return FillOutcome("no_change", script)
    except Exception as exc:
        log.warning("fill crashed (%s); restarting backend", exc)
        backend.restart()
        return FillOutcome("no_change", script)

    body = [ln.strip() for ln in result.script.lines[1:] if ln.strip()]
    applies = [c for c in body if c.startswith("apply ")]
    finisher = next((c for c in body if c.startswith("by ") or c == "done"), None)
    if result.solved and finisher is not None:
        block = applies + [finisher]
        candidate = replace_span(script, (hole.start_line, hole.end_line), block)
        res = verify_full(backend, candidate, cfg.verify_timeout_s, stats=stats)
        if comps.logger is not None:
            comps.logger.attempt(
                kind="fill",
                goal=goal,
                prefix_fp=state_fingerprint(script.text),
                action="\n".join(block),
                success=res.success,
                n_before=None,
                n_after=res.subgoals,
                elapsed_ms=res.elapsed_ms,
                hole=hole.hid,
                eff_goal=eff,
            )
        if res.success:
            return FillOutcome("verified", candidate)
        normalized, opened = open_minimal_sorries(
            candidate, _failing_tactic_lines(candidate, res.errors)
        )
        return FillOutcome("partial", normalized, opened)

    if applies:
        if is_apply_legal(script, hole):
            block = applies + ["sorry"]
        else:
            block = ["proof -"] + [f"  {a}" for a in applies] + ["  sorry", "qed"]
        candidate = replace_span(script, (hole.start_line, hole.end_line), block)
        res = verify_full(backend, candidate, cfg.verify_timeout_s, stats=stats)
        if comps.logger is not None:
            comps.logger.attempt(
                kind="fill",
                goal=goal,
                prefix_fp=state_fingerprint(script.text),
                action="\n".join(block),
                success=False,
                n_before=None,
                n_after=res.subgoals,
                elapsed_ms=res.elapsed_ms,
                hole=hole.hid,
                eff_goal=eff,
                tag="apply-only",
            )
        normalized, opened = open_minimal_sorries(
            candidate, _failing_tactic_lines(candidate, res.errors)
        )
        if not opened:
            opened = [h for h in find_holes(normalized) if h.hid not in {x.hid for x in find_holes(script)}]
        return FillOutcome("partial", normalized, opened)

    return FillOutcome("no_change", script)


# ---------------------------------------------------------------------------
# Repair
# ---------------------------------------------------------------------------

_PATH_RE = re.compile(r"(?:/[\w.\-]+)+")
_TIMESTAMP_RE = re.compile(r"\d{4}-\d{2}-\d{2}[T ]\d{2}:\d{2}:\d{2}(?:\.\d+)?Z?")


def _normalize_error(msg: str) -> str:
    msg = _PATH_RE.sub("<path>", msg)
    msg = _TIMESTAMP_RE.sub("<time>", msg)
    return msg.strip()


def _select_block(script: ProofScript, focus_line: int, hole: Hole, stage: int) -> tuple[str, BlockSpan]:
    if stage <= 1:
        span = enclosing_block(script, focus_line, "have_show")
        if span is not None:
            return "have_show", span
        return "have_show", BlockSpan("have_show", hole.start_line, hole.end_line)
    span = enclosing_block(script, focus_line, "case_block")
    if span is not None:
        return "case_block", span
    span = enclosing_block(script, focus_line, "subproof")
    if span is not None:
        return "subproof", span
    return "subproof", BlockSpan("subproof", 1, len(script.lines))


def _repair_user_prompt(
    eff_goal: str,
    state: str,
    errors: Sequence[str],
    context: str,
    block: str,
    ce: Sequence[str],
    banned: Sequence[str],
) -> str:
    def section(body: str) -> str:
        return body if body.strip() else "(none)"

    return (
        f"GOAL:\n{eff_goal}\n\n"
        f"STATE:\n{state if state.strip() else '(empty)'}\n\n"
        f"ERRORS:\n{section(chr(10).join(errors))}\n\n"
        f"CONTEXT:\n{section(context)}\n\n"
        f"BLOCK:\n{section(block)}\n\n"
        f"COUNTEREXAMPLES:\n{section(chr(10).join(ce))}\n\n"
        f"BANNED:\n{section(chr(10).join(banned))}"
    )


def cegis_repair(
    script: ProofScript,
    hole: Hole,
    state: PlannerState,
    cfg: PlannerConfig,
    proposer: ProposerBackend,
    backend: VerifierBackend,
    *,
    goal: str = "",
    stats: Optional[RunStats] = None,
    logger: Optional[RunLogger] = None,
) -> RepairOutcome:
    """Bounded counterexample-guided repair of the block around one hole.

    The anchor is the earliest failing line near the hole; the block kind
    follows the hole's stage.  Each proposed replacement is stripped to the
    block's granularity and fingerprinted; candidates already on the
    (hole, kind) ban list are rejected without touching the verifier.  A
    verifying substitution returns immediately; otherwise the last failing
    change is returned as tagged partial progress.
    """
    stage = max(1, state.stage.get(hole.hid, 1))
    deadline = monotonic() + cfg.repair_budget_s
    try:
        anchor = earliest_failure_line(backend, script, hole, cfg.verify_timeout_s)
    except Exception:
        anchor = hole.start_line
    focus_line = max(anchor, hole.start_line - cfg.anchor_window)
    kind, span = _select_block(script, focus_line, hole, stage)
    block_text = "\n".join(script.lines[span.start_line : span.end_line])
    state_block = _state_at_hole(backend, script, hole)
    eff = first_subgoal_text(state_block) or goal or script.goal
    ce = counterexample_hints(backend, state_block)
    check = check_script(backend, script, cfg.verify_timeout_s)
    errors = [_normalize_error(f"line {line}: {msg}") for line, msg in check.errors]
    context = "\n".join(
        script.lines[max(0, focus_line - 3) : min(len(script.lines), focus_line + 4)]
    )
    bans = state.ban_list(hole.hid, kind)

    last_failed: Optional[ProofScript] = None
    proposals = 0
    while monotonic() < deadline and proposals < cfg.repair_max_proposals:
        proposals += 1
        user = _repair_user_prompt(eff, state_block, errors, context, block_text, ce, list(bans))
        try:
            raw = proposer.complete(REPAIR_SYSTEM_PROMPT, user, 0.5, 1)
        except Exception as exc:
            log.warning("repair proposer failed (%s)", exc)
            break
        if not raw.strip():
            continue
        try:
            replacement = strip_to_type(raw, kind)
        except EmptyAfterStrip:
            continue
        fp = state_fingerprint(replacement)[:16]
        if fp in bans:
            continue
        try:
            candidate = replace_span(script, (span.start_line, span.end_line), replacement)
            res = verify_full(backend, candidate, cfg.verify_timeout_s, stats=stats)
        except VerifierTimeout:
            bans.append(fp)
            continue
        except Exception as exc:
            log.warning("repair verification crashed (%s); restarting backend", exc)
            backend.restart()
            bans.append(fp)
            continue
        if logger is not None:
            logger.attempt(
                kind="repair",
                goal=goal or script.goal,
                prefix_fp=state_fingerprint(script.text),
                action=replacement,
                success=res.success,
                elapsed_ms=res.elapsed_ms,
                stage=stage,
                block_kind=kind,
                hole=hole.hid,
                eff_goal=eff,
                ce=ce,
                fp=fp,
                ban_size=len(bans),
                tag=f"stage={stage}",
            )
        if res.success:
            return RepairOutcome("verified", candidate, f"stage={stage} verified")
        bans.append(fp)
        if candidate.lines != script.lines:
            last_failed = candidate
    if last_failed is not None:
        return RepairOutcome("partial", last_failed, f"stage={stage} partial-progress")
    return RepairOutcome("no_change", script, f"stage={stage} no-change")


# ---------------------------------------------------------------------------
# Outer control
# ---------------------------------------------------------------------------


def escalate(state: PlannerState, hid: str, c1: int = 2, c2: int = 3) -> PlannerState:
    """Apply the stage caps: 1 -> 2 after c1 failures, then the regeneration
    trigger after c2 stage-2 failures."""
    current = state.stage.get(hid, 0)
    if current <= 1 and state.tries.get((hid, 1), 0) >= c1:
        state.stage[hid] = 2
        current = 2
    if current == 2 and state.tries.get((hid, 2), 0) >= c2:
        state.regen_trigger = True
    return state


def select_focus(script: ProofScript, previous_line: int) -> Optional[str]:
    """The hole nearest the previous location; ties go to the earlier hole."""
    holes = find_holes(script)
    if not holes:
        return None
    best = min(holes, key=lambda h: (abs(h.start_line - previous_line), h.start_line))
    return best.hid


def _normalize_to_clean(
    backend: VerifierBackend, script: ProofScript, timeout_s: float = 30.0
) -> ProofScript:
    """Open holes until no failing tactic line remains (structural failures
    are left for repair)."""
    for _ in range(len(script.lines) + 1):
        result = check_script(backend, script, timeout_s, probe=True)
        failing = _failing_tactic_lines(script, result.errors)
        if not failing:
            break
        script, opened = open_minimal_sorries(script, failing)
        if not opened:
            break
    return script


def plan_auto(
    goal: str, cfg: PlannerConfig, comps: Components, on_iteration=None
) -> PlanResult:
    """Full plan-and-fill driver under the global budget.

    Samples and scores outlines, then loops: pick the focus hole, fill (and
    on no-change repair) at stages 0/1 or repair directly at stage 2, commit
    verified outcomes, normalize partial ones, count failures toward the
    stage caps, and regenerate the whole outline when the trigger fires.
    Returns the best script whether or not every gap was closed.

    ``on_iteration``, when given, is called with the working script after
    every non-verified iteration (used by audits).
    """
    cfg.validate()
    t0 = monotonic()
    deadline = t0 + cfg.global_budget_s
    stats = comps.stats if comps.stats is not None else RunStats()
    comps.stats = stats
    logger = comps.logger
    run_id = logger.run_id if logger is not None else uuid.uuid4().hex

    ctx_hints = context_hints(comps.backend, goal, cfg.k_ctx)
    lex_hints = (
        lexicon_hints(comps.lexicon, goal, cfg.k_lex) if comps.lexicon is not None else []
    )
    hints = combine_hints(ctx_hints, lex_hints, cfg.k_hint)

    outlines_sampled = 0
    fills = repairs = regenerations = 0

    def sample_and_pick(extra: Optional[ProofScript]) -> tuple[Optional[ProofScript], bool]:
        nonlocal outlines_sampled
        sampled = sample_outlines(goal, hints, cfg, comps.for_outlines())
        outlines_sampled += len(sampled)
        candidates = sampled + ([extra] if extra is not None else [])
        best: Optional[ProofScript] = None
        best_key: tuple[float, int] | None = None
        best_clean = False
        for outline in candidates:
            score, clean = _score_outline_detail(
                outline, comps.backend, hints, (cfg.alpha, cfg.beta, cfg.gamma),
                cfg.k_hint, cfg.verify_timeout_s, stats,
            )
            if logger is not None:
                logger.attempt(
                    kind="regeneration",
                    goal=goal,
                    action=outline.text,
                    success=clean,
                    score_key=score,
                )
            key = (-score, len(outline.lines))
            if best_key is None or key < best_key:
                best, best_key, best_clean = outline, key, clean
        return best, best_clean

    working, working_clean = sample_and_pick(None)
    if working is None:
        working = parse_script(f'lemma "{goal}"\n  sorry')
        working_clean = False
    else:
        # Adopted outlines must satisfy the same discipline as everything
        # else in the loop: failures live in holes, never in raw tactic lines.
        working = _normalize_to_clean(comps.backend, working, cfg.verify_timeout_s)

    def finish(solved: bool, script: ProofScript) -> PlanResult:
        result = PlanResult(
            solved, script, outlines_sampled, fills, repairs, regenerations,
            monotonic() - t0, run_id,
        )
        if logger is not None:
            logger.run(
                goal_id=state_fingerprint(goal)[:16],
                mode="auto",
                config={
                    "temps": list(cfg.temperatures),
                    "k": cfg.samples_per_temp,
                    "caps": [cfg.c1, cfg.c2],
                    "budget_s": cfg.global_budget_s,
                },
                models={
                    "proposer": type(comps.proposer).__name__,
                    "reranker": comps.reranker.kind if comps.reranker else None,
                    "premises": "tfidf" if comps.premise_index is not None else None,
                },
                runtime_s=result.elapsed_s,
                timeout=not solved and monotonic() >= deadline,
                success=solved,
                proof=script.text if solved else None,
                stats={
                    "outlines": outlines_sampled,
                    "fills": fills,
                    "repairs": repairs,
                    "regenerations": regenerations,
                },
            )
        return result

    plan_state = PlannerState(ban_cap=cfg.ban_cap)
    prev_line = 0

    while monotonic() < deadline:
        holes = find_holes(working)
        if not holes:
            if working_clean:
                return finish(True, working)
            res = verify_full(comps.backend, working, cfg.verify_timeout_s, stats=stats)
            if logger is not None:
                logger.attempt(
                    kind="regeneration", goal=goal, action=working.text, success=res.success,
                    tag="hole-free-verify",
                )
            if res.success:
                return finish(True, working)
            plan_state.regen_trigger = True
        else:
            hole = next((h for h in holes if h.hid == plan_state.focus), holes[0])
            prev_line = hole.start_line
            stage = plan_state.stage.get(hole.hid, 0)
            acted_stage = 1 if stage <= 1 else 2
            outcome_kind = "fail"
            outcome_script = working

            if stage <= 1:
                fill = fill_hole(working, hole, goal, comps, cfg)
                fills += 1
                if fill.kind == "verified":
                    return finish(True, fill.script)
                if fill.kind == "partial":
                    outcome_kind, outcome_script = "partial", fill.script
                else:
                    rep = cegis_repair(
                        working, hole, plan_state, cfg, comps.for_repair(),
                        comps.backend, goal=goal, stats=stats, logger=logger,
                    )
                    repairs += 1
                    if rep.kind == "verified":
                        return finish(True, rep.script)
                    if rep.kind == "partial":
                        outcome_kind, outcome_script = "partial", rep.script
            else:
                rep = cegis_repair(
                    working, hole, plan_state, cfg, comps.for_repair(),
                    comps.backend, goal=goal, stats=stats, logger=logger,
                )
                repairs += 1
                if rep.kind == "verified":
                    return finish(True, rep.script)
                if rep.kind == "partial":
                    outcome_kind, outcome_script = "partial", rep.script

            plan_state.tries[(hole.hid, acted_stage)] = (
                plan_state.tries.get((hole.hid, acted_stage), 0) + 1
            )
            escalate(plan_state, hole.hid, cfg.c1, cfg.c2)
            if outcome_kind == "partial":
                working = _normalize_to_clean(comps.backend, outcome_script, cfg.verify_timeout_s)
                working_clean = False
                plan_state.focus = select_focus(working, prev_line)
            else:
                plan_state.focus = hole.hid
            if on_iteration is not None:
                on_iteration(working)

        if plan_state.regen_trigger:
            plan_state.regen_trigger = False
            if regenerations >= cfg.regen_cap or monotonic() >= deadline:
                break
            regenerations += 1
            picked, clean = sample_and_pick(working)
            if picked is not None:
                working, working_clean = picked, clean
                working = _normalize_to_clean(comps.backend, working, cfg.verify_timeout_s)
            plan_state = PlannerState(ban_cap=cfg.ban_cap)
            prev_line = 0

    return finish(False, working)
