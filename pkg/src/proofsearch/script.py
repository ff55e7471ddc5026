"""Proof-script representation and transformation.

A :class:`ProofScript` is an immutable sequence of text lines whose first
non-blank line declares a quoted goal.  Everything here is pure text
manipulation: hole discovery, windowed hole identity, block-structure
extraction from indentation and keywords, span replacement, normalization of
half-edited scripts, and canonicalization of raw proposer outlines.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

from .errors import EmptyAfterStrip, HeaderOverlap, NoGoalHeader, Unsalvageable

#: Character window on either side of a hole used for its stable identity.
HID_WINDOW = 120

_GOAL_HEADER_RE = re.compile(r'^\s*(?:lemma|theorem)\b[^"]*"(.+)"')
_HEADER_LINE_RE = re.compile(r"^\s*(?:lemma|theorem)\b")
_TACTIC_RE = re.compile(r"^\s*(?:apply\b|by\b|done\s*$)")
_HEAD_RE = re.compile(r"^\s*(?:have|show|obtain)\b")
_INLINE_BY_RE = re.compile(r"\s+by\s+\S.*$")
_PROOF_RE = re.compile(r"^\s*proof\b")
_QED_RE = re.compile(r"^\s*qed\b")
_CASE_RE = re.compile(r"^\s*case\b")
_FENCE_RE = re.compile(r"^\s*```")
_JUSTIFICATION_RE = re.compile(r"^\s*(?:by\b|apply\b|proof\b|sorry\b|done\b|using\b|unfolding\b)")

_ISAR_KEYWORDS = (
    "proof qed have show obtain case next then thus hence from with using by "
    "apply done sorry fix assume assumes shows let also finally moreover "
    "ultimately note define lemma theorem unfolding subgoal oops for and if where"
).split()
_ISAR_LINE_RE = re.compile(r'^\s*(?:["(.]|(?:%s)\b)' % "|".join(_ISAR_KEYWORDS))

_WORD_CHARS = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_'")


@dataclass(frozen=True)
class ProofScript:
    """Ordered lines of a proof document plus the goal quoted in its header."""

    lines: tuple[str, ...]
    goal: str

    @property
    def text(self) -> str:
        return "\n".join(self.lines)

    def with_line(self, line: str) -> "ProofScript":
        return ProofScript(self.lines + (line,), self.goal)


@dataclass(frozen=True)
class Hole:
    """One ``sorry`` occurrence: line range, character span, stable identity."""

    start_line: int
    end_line: int
    char_span: tuple[int, int]
    hid: str


@dataclass(frozen=True)
class BlockSpan:
    """A contiguous line range of a given structural kind (end exclusive)."""

    kind: str
    start_line: int
    end_line: int


def _indent_of(line: str) -> str:
    return line[: len(line) - len(line.lstrip(" "))]


def parse_script(text: str) -> ProofScript:
    """Parse raw proof text; the first non-blank line must quote a goal."""
    lines = text.split("\n")
    for line in lines:
        if not line.strip():
            continue
        m = _GOAL_HEADER_RE.match(line)
        if m is None:
            raise NoGoalHeader(f"first declaration has no quoted goal: {line.strip()!r}")
        return ProofScript(tuple(lines), m.group(1))
    raise NoGoalHeader("empty script")


def render(script: ProofScript) -> str:
    return script.text


def _window_digest(text: str, a: int, b: int, w: int) -> str:
    window = text[max(0, a - w) : min(len(text), b + w)]
    return hashlib.sha1(window.encode("utf-8")).hexdigest()[:16]


def _sorry_spans(text: str) -> list[tuple[int, int]]:
    """Character spans of whole-word ``sorry`` tokens outside comments/strings."""
    spans: list[tuple[int, int]] = []
    depth = 0
    in_string = False
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if in_string:
            if ch == "\\" and i + 1 < n:
                i += 2
                continue
            if ch == '"':
                in_string = False
            i += 1
            continue
        if depth > 0:
            if text.startswith("(*", i):
                depth += 1
                i += 2
            elif text.startswith("*)", i):
                depth -= 1
                i += 2
            else:
                i += 1
            continue
        if text.startswith("(*", i):
            depth += 1
            i += 2
            continue
        if ch == '"':
            in_string = True
            i += 1
            continue
        if text.startswith("sorry", i):
            before = text[i - 1] if i > 0 else ""
            after = text[i + 5] if i + 5 < n else ""
            if before not in _WORD_CHARS and after not in _WORD_CHARS:
                spans.append((i, i + 5))
                i += 5
                continue
        i += 1
    return spans


def find_holes(script: ProofScript) -> list[Hole]:
    """All standalone ``sorry`` holes in position order."""
    text = script.text
    holes = []
    for a, b in _sorry_spans(text):
        line = text.count("\n", 0, a)
        holes.append(Hole(line, line + 1, (a, b), _window_digest(text, a, b, HID_WINDOW)))
    return holes


def hole_id(script: ProofScript, hole: Hole, w: int = HID_WINDOW) -> str:
    """16-hex identity of the hole's surrounding character window.

    Stable under any edit whose changed range is disjoint from the window.
    """
    a, b = hole.char_span
    if not (0 <= a < b <= len(script.text)):
        raise ValueError(f"hole span {hole.char_span} out of range")
    return _window_digest(script.text, a, b, w)


def normalize_state_text(text: str) -> str:
    """Collapse space/tab runs, strip trailing blanks, drop blank lines."""
    out = []
    for line in text.splitlines():
        collapsed = re.sub(r"[ \t]+", " ", line).rstrip()
        if collapsed:
            out.append(collapsed)
    return "\n".join(out)


def state_fingerprint(text: str) -> str:
    """40-hex SHA1 of the whitespace-normalized text."""
    return hashlib.sha1(normalize_state_text(text).encode("utf-8")).hexdigest()


def replace_span(
    script: ProofScript, span: tuple[int, int], replacement: str | list[str]
) -> ProofScript:
    """Replace the line range ``span`` with ``replacement``, re-indented.

    Replacement lines keep their relative indentation but are shifted so the
    block starts at the indentation of the first removed line.  The goal
    header (line 0) may never be touched.
    """
    start, end = span
    if not (0 <= start < end <= len(script.lines)):
        raise ValueError(f"span {span} out of bounds for {len(script.lines)} lines")
    if start == 0:
        raise HeaderOverlap("replacement span covers the goal header")
    if isinstance(replacement, str):
        repl_lines = replacement.split("\n") if replacement.strip() else []
    else:
        repl_lines = list(replacement)
        if all(not ln.strip() for ln in repl_lines):
            repl_lines = []
    target = _indent_of(script.lines[start])
    if repl_lines:
        base = min(len(_indent_of(ln)) for ln in repl_lines if ln.strip())
        repl_lines = [target + ln[base:] if ln.strip() else "" for ln in repl_lines]
    new_lines = script.lines[:start] + tuple(repl_lines) + script.lines[end:]
    return ProofScript(new_lines, script.goal)


def _subproof_spans(lines: tuple[str, ...]) -> list[BlockSpan]:
    spans = []
    stack: list[int] = []
    for i, line in enumerate(lines):
        if _PROOF_RE.match(line):
            stack.append(i)
        elif _QED_RE.match(line) and stack:
            spans.append(BlockSpan("subproof", stack.pop(), i + 1))
    return spans


def _case_spans(lines: tuple[str, ...]) -> list[BlockSpan]:
    spans = []
    for i, line in enumerate(lines):
        if not _CASE_RE.match(line):
            continue
        d = len(_indent_of(line))
        end = len(lines)
        for j in range(i + 1, len(lines)):
            nxt = lines[j]
            if not nxt.strip():
                continue
            stripped = nxt.lstrip()
            if len(_indent_of(nxt)) <= d and (
                stripped.startswith("next") or stripped.startswith("qed") or stripped.startswith("case")
            ):
                end = j
                break
        spans.append(BlockSpan("case_block", i, end))
    return spans


def _have_show_spans(lines: tuple[str, ...]) -> list[BlockSpan]:
    subproofs = {s.start_line: s.end_line for s in _subproof_spans(lines)}
    spans = []
    for i, line in enumerate(lines):
        if not _HEAD_RE.match(line):
            continue
        d = len(_indent_of(line))
        end = i + 1
        if end < len(lines) and _PROOF_RE.match(lines[end]) and len(_indent_of(lines[end])) >= d:
            end = subproofs.get(end, end + 1)
        else:
            while end < len(lines) and (not lines[end].strip() or len(_indent_of(lines[end])) > d):
                end += 1
            while end > i + 1 and not lines[end - 1].strip():
                end -= 1
        spans.append(BlockSpan("have_show", i, end))
    return spans


def enclosing_block(script: ProofScript, line: int, kind: str) -> BlockSpan | None:
    """Smallest block of ``kind`` containing ``line``, or None."""
    if not (0 <= line < len(script.lines)):
        raise ValueError(f"line {line} out of bounds")
    if kind == "whole":
        return BlockSpan("whole", 0, len(script.lines))
    finder = {
        "subproof": _subproof_spans,
        "case_block": _case_spans,
        "have_show": _have_show_spans,
    }.get(kind)
    if finder is None:
        raise ValueError(f"unknown block kind: {kind}")
    containing = [s for s in finder(script.lines) if s.start_line <= line < s.end_line]
    if not containing:
        return None
    return min(containing, key=lambda s: (s.end_line - s.start_line, -s.start_line))


def open_minimal_sorries(
    script: ProofScript, failing_lines: "list[int] | set[int] | tuple[int, ...]"
) -> tuple[ProofScript, list[Hole]]:
    """Replace failing tactic lines with explicit holes.

    Each failing tactic line becomes a ``sorry`` at matching indentation; a
    failing apply-sequence directly under a have/show/obtain head becomes a
    local ``proof -`` / ``sorry`` / ``qed`` block instead, so the script never
    keeps raw failing tactics between iterations.  Returns the edited script
    and the newly opened holes.
    """
    targets = sorted({i for i in failing_lines if 0 < i < len(script.lines)}, reverse=True)
    if not targets:
        return script, []
    lines = list(script.lines)
    sorry_positions: list[int] = []
    handled: set[int] = set()
    for idx in targets:
        if idx in handled or not _TACTIC_RE.match(lines[idx]):
            continue
        lo = idx
        while lo - 1 > 0 and _TACTIC_RE.match(lines[lo - 1]):
            lo -= 1
        hi = idx
        while hi + 1 < len(lines) and _TACTIC_RE.match(lines[hi + 1]):
            hi += 1
        if lo - 1 >= 0 and _HEAD_RE.match(lines[lo - 1]):
            indent = _indent_of(lines[lo])
            repl = [indent + "proof -", indent + "  sorry", indent + "qed"]
            delta = len(repl) - (hi + 1 - lo)
            sorry_positions = [p + delta if p > hi else p for p in sorry_positions]
            lines[lo : hi + 1] = repl
            handled.update(range(lo, hi + 1))
            sorry_positions.append(lo + 1)
        else:
            lines[idx] = _indent_of(lines[idx]) + "sorry"
            sorry_positions.append(idx)
    new_script = ProofScript(tuple(lines), script.goal)
    opened = [h for h in find_holes(new_script) if h.start_line in set(sorry_positions)]
    return new_script, opened


_KIND_START = {
    "have_show": _HEAD_RE,
    "case_block": _CASE_RE,
    "subproof": _PROOF_RE,
    "whole": _HEADER_LINE_RE,
}


def strip_to_type(block: str, kind: str) -> str:
    """Strip proposer wrappers so the block matches the granularity of ``kind``.

    Removes code fences, any ``lemma``/``theorem`` header when the target is a
    sub-block, and leading/trailing prose.
    """
    if kind not in _KIND_START:
        raise ValueError(f"unknown block kind: {kind}")
    lines = [ln for ln in block.split("\n") if not _FENCE_RE.match(ln)]
    if kind != "whole":
        lines = [ln for ln in lines if not _HEADER_LINE_RE.match(ln)]
    start = None
    for i, ln in enumerate(lines):
        if _KIND_START[kind].match(ln) or (kind == "whole" and start is None and _ISAR_LINE_RE.match(ln)):
            start = i
            break
    if start is None:
        raise EmptyAfterStrip(f"no {kind} block found in reply")
    end = len(lines)
    while end > start and not (
        lines[end - 1].strip() and _ISAR_LINE_RE.match(lines[end - 1])
    ):
        end -= 1
    kept = lines[start:end]
    if not any(ln.strip() for ln in kept):
        raise EmptyAfterStrip("nothing left after stripping")
    return "\n".join(kept)


def _split_inline_by(line: str) -> tuple[str, str] | None:
    """Split ``have "x" by simp`` into head and indented sorry replacement."""
    m = _INLINE_BY_RE.search(line)
    if m is None or not _HEAD_RE.match(line):
        return None
    head = line[: m.start()].rstrip()
    return head, _indent_of(line) + "  sorry"


def normalize_outline(raw: str, goal: str, enforce_holes: bool = True) -> ProofScript:
    """Canonicalize a raw outline sample into a well-formed gapped script.

    The header is rewritten to quote the true goal, unjustified have/show
    heads get a ``sorry`` underneath, unmatched ``proof`` blocks are closed,
    and (when ``enforce_holes``) inline ``by``-style justifications are
    rewritten into explicit holes.
    """
    lines = [ln for ln in raw.split("\n") if not _FENCE_RE.match(ln)]
    while lines and not (lines[0].strip() and _ISAR_LINE_RE.match(lines[0])):
        lines.pop(0)
    while lines and not (lines[-1].strip() and _ISAR_LINE_RE.match(lines[-1])):
        lines.pop()
    body: list[str] = []
    for ln in lines:
        if _HEADER_LINE_RE.match(ln):
            continue
        body.append(ln)
    while body and not body[0].strip():
        body.pop(0)
    if not any(ln.strip() for ln in body):
        raise Unsalvageable("no proof body recovered from sample")

    out = [f'lemma "{goal}"']
    for ln in body:
        if enforce_holes:
            if _TACTIC_RE.match(ln) and (
                ln.lstrip().startswith("by") or ln.strip() == "done"
            ):
                out.append(_indent_of(ln) + "sorry")
                continue
            split = _split_inline_by(ln)
            if split is not None:
                out.extend(split)
                continue
        out.append(ln)

    # Terminate structurally incomplete branches with explicit holes.
    completed: list[str] = []
    for i, ln in enumerate(out):
        completed.append(ln)
        if not _HEAD_RE.match(ln) or _INLINE_BY_RE.search(ln):
            continue
        nxt = next((x for x in out[i + 1 :] if x.strip()), None)
        if nxt is None or not _JUSTIFICATION_RE.match(nxt):
            completed.append(_indent_of(ln) + "  sorry")

    open_proofs: list[str] = []
    for ln in completed:
        if _PROOF_RE.match(ln):
            open_proofs.append(_indent_of(ln))
        elif _QED_RE.match(ln) and open_proofs:
            open_proofs.pop()
    for indent in reversed(open_proofs):
        completed.append(indent + "qed")

    return parse_script("\n".join(completed))


def is_apply_legal(script: ProofScript, hole: Hole) -> bool:
    """True iff an apply-step may be inserted at the hole.

    Conservative: legal only at the top level of the lemma, outside any
    subproof and outside any have/show/obtain block.
    """
    if not (0 <= hole.start_line < len(script.lines)):
        raise ValueError("hole out of bounds")
    return (
        enclosing_block(script, hole.start_line, "subproof") is None
        and enclosing_block(script, hole.start_line, "have_show") is None
    )
