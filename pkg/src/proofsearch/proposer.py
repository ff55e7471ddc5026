"""Language-model proposal layer: prompts, temperatures, sanitisation, mocks.

The model is a black-box conditional generator behind
:class:`ProposerBackend`; everything that makes its output usable (grammar
filtering, escalating temperatures, heuristic fallbacks) lives here.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any, Mapping, Optional, Protocol, Sequence, runtime_checkable

import requests

from .errors import BackendUnavailable
from .script import state_fingerprint
from .verifier import SyntheticSpace, first_subgoal_text

#: Stagnation level at which heuristic template variants are injected.
HEURISTIC_STAGNATION = 3

#: Candidates longer than this are discarded outright.
MAX_COMMAND_CHARS = 200

STEP_SYSTEM_PROMPT = (
    "You are proposing the next Isabelle proof step.\n"
    "Reply with 3 to 8 candidate commands, one per line.\n"
    "Every line must start with `apply `.\n"
    "No prose, no comments, no numbering."
)

FINISH_SYSTEM_PROMPT = (
    "You are proposing Isabelle proof finishing commands.\n"
    "Reply with 3 to 8 candidates, one per line.\n"
    "Every line must be a `by ...` command or `done`.\n"
    "No prose, no comments, no numbering."
)


@dataclass(frozen=True)
class ProposalContext:
    """Everything the proposer may condition on for one invocation."""

    goal: str
    accepted_steps: tuple[str, ...] = ()
    state_hint: str = ""
    helpful_facts: tuple[str, ...] = ()
    stagnation: int = 0
    depth: int = 0


@runtime_checkable
class ProposerBackend(Protocol):
    def complete(self, system: str, user: str, temperature: float, n: int) -> str: ...


def step_temperature(stagnation: int) -> float:
    if stagnation < 0:
        raise ValueError("stagnation must be >= 0")
    return min(0.9, 0.5 + 0.1 * stagnation)


def finish_temperature(stagnation: int) -> float:
    if stagnation < 0:
        raise ValueError("stagnation must be >= 0")
    return min(0.6, 0.2 + 0.05 * stagnation)


def build_prompt(ctx: ProposalContext, mode: str) -> tuple[str, str]:
    """System and user prompts for one step/finish invocation.

    The user prompt always carries the four context sections in fixed order;
    a HINTS clause is appended when helpful facts are present.
    """
    if mode == "step":
        system = STEP_SYSTEM_PROMPT
    elif mode == "finish":
        system = FINISH_SYSTEM_PROMPT
    else:
        raise ValueError(f"unknown mode: {mode}")
    steps = "\n".join(ctx.accepted_steps) if ctx.accepted_steps else "(none)"
    state = ctx.state_hint if ctx.state_hint.strip() else "(empty)"
    facts = "\n".join(ctx.helpful_facts) if ctx.helpful_facts else "(none)"
    user = f"GOAL:\n{ctx.goal}\n\nSTEPS:\n{steps}\n\nSTATE:\n{state}\n\nFACTS:\n{facts}"
    if ctx.helpful_facts:
        user += f"\n\nHINTS: Prefer using {', '.join(ctx.helpful_facts)} if applicable."
    return system, user


_FENCE_RE = re.compile(r"^\s*```")
_DECORATION_RE = re.compile(r"^(?:\d+[.)]\s+|[-*•]\s+)")


def sanitize(raw: str, mode: str) -> list[str]:
    """Filter raw model output down to grammar-conforming commands.

    Strips fences, numbering and bullets; keeps only approved-prefix lines;
    drops over-long lines; deduplicates preserving first occurrence.
    """
    out: list[str] = []
    seen: set[str] = set()
    for line in raw.splitlines():
        if _FENCE_RE.match(line):
            continue
        cmd = _DECORATION_RE.sub("", line.strip()).strip()
        if not cmd or len(cmd) > MAX_COMMAND_CHARS:
            continue
        if mode == "step":
            keep = cmd.startswith("apply ")
        else:
            keep = cmd.startswith("by ") or cmd == "done"
        if keep and cmd not in seen:
            seen.add(cmd)
            out.append(cmd)
    return out


_IDENT_RE = re.compile(r"[a-z][a-z0-9_']*")
_BINDER_RE = re.compile(r"[⋀∀∃]\s*([^.]+)\.")
_VAR_STOPLIST = {
    "rev", "map", "set", "sum", "inv", "abs", "min", "max", "fst", "snd",
    "the", "if", "then", "else", "let", "in", "of", "all", "ex", "not",
    "and", "or",
}


def _candidate_variables(text: str) -> list[str]:
    """Crude variable-name extraction; junk is weeded out by the verifier."""
    seen: list[str] = []
    for m in _BINDER_RE.finditer(text):
        for name in _IDENT_RE.findall(m.group(1)):
            if name not in seen:
                seen.append(name)
    if seen:
        return seen
    for name in _IDENT_RE.findall(text):
        if len(name) <= 3 and name not in _VAR_STOPLIST and name not in seen:
            seen.append(name)
    return seen


def heuristic_variants(
    state_hint: str, goal: str, helpful_facts: Sequence[str] = ()
) -> list[str]:
    """Template fallback commands: induction/cases per variable plus staples."""
    source = first_subgoal_text(state_hint) or goal
    cmds: list[str] = []
    for var in _candidate_variables(source):
        cmds.append(f"apply (induction {var})")
        cmds.append(f"apply (cases {var})")
    for fact in list(helpful_facts)[:3]:
        cmds.append(f"apply (rule {fact})")
    cmds.extend(["apply simp", "apply auto", "apply blast"])
    deduped: list[str] = []
    for cmd in cmds:
        if cmd not in deduped:
            deduped.append(cmd)
    return deduped


def propose(
    backend: ProposerBackend, ctx: ProposalContext, mode: str, k: int
) -> list[str]:
    """One backend call, sanitized, with heuristic injection under stagnation.

    Heuristic variants are step commands, so they are only appended in step
    mode; the approved-prefix guarantee holds for every returned command.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    system, user = build_prompt(ctx, mode)
    temperature = step_temperature(ctx.stagnation) if mode == "step" else finish_temperature(ctx.stagnation)
    raw = backend.complete(system, user, temperature, k)
    cmds = sanitize(raw, mode)
    if mode == "step" and ctx.stagnation >= HEURISTIC_STAGNATION:
        for extra in heuristic_variants(ctx.state_hint, ctx.goal, ctx.helpful_facts):
            if extra not in cmds:
                cmds.append(extra)
    return cmds[:k]


# ---------------------------------------------------------------------------
# Mock proposers
# ---------------------------------------------------------------------------


def _mode_tag(system: str) -> str:
    lowered = system.lower()
    if "outline" in lowered:
        return "outline"
    if "block" in lowered:
        return "repair"
    if "finish" in lowered:
        return "finish"
    return "step"


_SECTION_RE = re.compile(r"^(GOAL|STEPS|STATE|FACTS|ERRORS|CONTEXT|BLOCK|COUNTEREXAMPLES|BANNED):\s*$")


def _prompt_section(user: str, name: str) -> Optional[str]:
    lines = user.split("\n")
    collected: list[str] | None = None
    for line in lines:
        m = _SECTION_RE.match(line)
        if m:
            if collected is not None:
                break
            if m.group(1) == name:
                collected = []
            continue
        if collected is not None:
            collected.append(line)
    if collected is None:
        return None
    return "\n".join(collected).strip()


def prompt_key_text(user: str) -> str:
    """The part of a prompt a scripted fixture keys on: STATE, else GOAL."""
    state = _prompt_section(user, "STATE")
    if state and state != "(empty)":
        return state
    goal = _prompt_section(user, "GOAL")
    if goal:
        return goal
    return user


class ScriptedProposer:
    """Replays fixture completions keyed by prompt state fingerprints.

    The fixture is a map from keys to either a list of lines (one completion,
    returned on every call) or a list of such lists (successive completions,
    the last repeated).  Keys are tried most- to least-specific:
    ``"<mode>:<fp>"``, ``"<fp>"``, ``"<mode>:*"``, ``"*"`` where ``fp`` is the
    state fingerprint of the prompt's STATE block (GOAL block when no state).
    """

    def __init__(self, table: Mapping[str, Any]):
        self.table = dict(table)
        self._served: dict[str, int] = {}
        self.calls = 0

    def complete(self, system: str, user: str, temperature: float, n: int) -> str:
        self.calls += 1
        tag = _mode_tag(system)
        fp = state_fingerprint(prompt_key_text(user))
        for key in (f"{tag}:{fp}", fp, f"{tag}:*", "*"):
            if key in self.table:
                entry = self.table[key]
                break
        else:
            return ""
        if not entry:
            return ""
        if isinstance(entry[0], (list, tuple)):
            idx = min(self._served.get(key, 0), len(entry) - 1)
            self._served[key] = idx + 1
            chosen = entry[idx]
        else:
            chosen = entry
        return "\n".join(chosen)


_STATE_ID_RE = re.compile(r"STATE (\S+)")


class OracleProposer:
    """Proposes the true outgoing edges of a synthetic space, plus noise.

    The current node is read from the prompt's STATE block; when absent the
    GOAL block is mapped through the space's per-node goals (unknown goals
    start at the root).  Deterministic for a fixed seed.
    """

    def __init__(self, space: SyntheticSpace, noise: int = 0, seed: int = 0):
        self.space = space
        self.noise = noise
        self.seed = seed
        self.calls = 0

    def _current_node(self, user: str) -> str:
        state = _prompt_section(user, "STATE") or ""
        m = _STATE_ID_RE.search(state)
        if m and m.group(1) in self.space.nodes:
            return m.group(1)
        goal = _prompt_section(user, "GOAL") or ""
        return self.space.goal_to_node().get(goal.strip(), self.space.root)

    def complete(self, system: str, user: str, temperature: float, n: int) -> str:
        self.calls += 1
        tag = _mode_tag(system)
        if tag not in ("step", "finish"):
            return ""
        node = self._current_node(user)
        outgoing = sorted(cmd for (src, cmd) in self.space.edges if src == node)
        if tag == "step":
            cmds = [c for c in outgoing if c.startswith("apply ")]
            cmds.extend(f"apply zz_noise{i}" for i in range(self.noise))
        else:
            cmds = [c for c in outgoing if c.startswith("by ") or c == "done"]
        return "\n".join(cmds)


class HttpProposer:
    """POSTs ``{system, user, temperature, n}`` to a local completion server."""

    def __init__(self, url: str, timeout_s: float = 60.0):
        self.url = url
        self.timeout_s = timeout_s

    def complete(self, system: str, user: str, temperature: float, n: int) -> str:
        payload = {"system": system, "user": user, "temperature": temperature, "n": n}
        last_error: Exception | None = None
        for _ in range(2):  # single retry on transport error
            try:
                resp = requests.post(self.url, json=payload, timeout=self.timeout_s)
                resp.raise_for_status()
                content_type = resp.headers.get("content-type", "")
                if "json" in content_type:
                    body = resp.json()
                    for field_name in ("text", "completion", "response", "content"):
                        if isinstance(body, dict) and field_name in body:
                            return str(body[field_name])
                    return str(body)
                return resp.text
            except requests.RequestException as exc:
                last_error = exc
        raise BackendUnavailable(f"proposer endpoint {self.url}: {last_error}")
