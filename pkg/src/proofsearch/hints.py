"""Micro-retrieval for planning: context facts plus a mined token lexicon.

Deliberately symbolic and cheap: context hints come straight from the
checker's state printout, lexicon hints from a token-to-lemma co-occurrence
map mined offline, both capped and merged with context-first priority.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import LexiconInvalid
from .tokens import tokenize
from .verifier import VerifierBackend, assemble_theory

log = logging.getLogger(__name__)

#: Facts too generic to be worth suggesting.
TRIVIAL_FACT_STOPLIST = frozenset({"refl", "sym", "trans", "TrueI", "conjI"})

DEFAULT_K_CTX = 8
DEFAULT_K_LEX = 8
DEFAULT_K_HINT = 12


@dataclass
class HintLexicon:
    """Map from goal token to weighted lemma suggestions."""

    table: dict[str, list[tuple[str, float]]] = field(default_factory=dict)

    def lemmas(self) -> set[str]:
        return {h for entries in self.table.values() for h, _ in entries}


@dataclass
class HintSet:
    """Ordered deduplicated hints with their source tags (ctx before lex)."""

    ids: tuple[str, ...] = ()
    sources: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)


_FACT_HEADINGS = {"this:", "assms:", "facts:"}


def _facts_from_state(state: str) -> list[str]:
    names: list[str] = []
    collecting = False
    for line in state.splitlines():
        stripped = line.strip()
        if stripped in _FACT_HEADINGS:
            collecting = True
            continue
        if collecting and line.startswith((" ", "\t")) and stripped:
            names.extend(stripped.split())
        else:
            collecting = False
    return names


def context_hints(backend: VerifierBackend, goal: str, k_ctx: int) -> list[str]:
    """Fact names the checker itself considers relevant for the bare goal.

    Opens the goal in a minimal theory, reads the state printout, strips
    qualifiers, deduplicates, drops trivial facts, truncates to ``k_ctx``.
    Verifier failures yield an empty list.
    """
    if k_ctx <= 0:
        return []
    theory = assemble_theory([f'lemma "{goal}"'], None, "step")
    try:
        outcome = backend.check_theory(theory, 10.0)
    except Exception as exc:
        log.warning("context-hint probe failed: %s", exc)
        return []
    if not outcome.ok:
        log.debug("context-hint probe rejected for goal %r", goal)
        return []
    hints: list[str] = []
    for name in _facts_from_state(outcome.output):
        short = name.rsplit(".", 1)[-1]
        if short and short not in hints and short not in TRIVIAL_FACT_STOPLIST:
            hints.append(short)
    return hints[:k_ctx]


def lexicon_hints(lexicon: HintLexicon, goal: str, k_lex: int) -> list[str]:
    """Accumulate lexicon weights over the goal's token multiset.

    Each token occurrence contributes its full weight; ranking is by score
    descending with ties broken by lemma id ascending.
    """
    if k_lex <= 0:
        return []
    scores: dict[str, float] = {}
    for token in tokenize(goal):
        for lemma, weight in lexicon.table.get(token, ()):
            scores[lemma] = scores.get(lemma, 0.0) + weight
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return [lemma for lemma, _ in ranked[:k_lex]]


def combine_hints(
    ctx: Sequence[str], lex: Sequence[str], k_hint: int = DEFAULT_K_HINT
) -> HintSet:
    """Merge hint lists, context first, deduplicated, capped at ``k_hint``."""
    ids: list[str] = []
    sources: list[str] = []
    for name in ctx:
        if name not in ids:
            ids.append(name)
            sources.append("ctx")
    for name in lex:
        if name not in ids:
            ids.append(name)
            sources.append("lex")
    return HintSet(tuple(ids[:k_hint]), tuple(sources[:k_hint]))


def hint_bonus(skeleton, hints: HintSet, k_hint: int = DEFAULT_K_HINT) -> int:
    """min(number of distinct hints used in the skeleton, k_hint)."""
    text = skeleton.text if hasattr(skeleton, "text") else str(skeleton)
    used = sum(
        1
        for name in hints.ids
        if re.search(r"(?<![A-Za-z0-9_])%s(?![A-Za-z0-9_])" % re.escape(name), text)
    )
    return min(used, k_hint)


def mine_lexicon(corpus: Iterable[tuple[str, Sequence[str]]]) -> HintLexicon:
    """Correlate goal tokens with the lemmas used in their proofs.

    Every distinct goal token contributes weight 1 to every lemma used for
    that goal; weights accumulate over the corpus.
    """
    table: dict[str, dict[str, float]] = {}
    for goal, lemmas in corpus:
        for token in set(tokenize(goal)):
            bucket = table.setdefault(token, {})
            for lemma in lemmas:
                bucket[lemma] = bucket.get(lemma, 0.0) + 1.0
    return HintLexicon(
        {t: sorted(weights.items(), key=lambda kv: (-kv[1], kv[0])) for t, weights in table.items()}
    )


def save_lexicon(lexicon: HintLexicon, path) -> None:
    doc = {t: [[h, w] for h, w in entries] for t, entries in sorted(lexicon.table.items())}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_lexicon(path) -> HintLexicon:
    """Read and validate the JSON token-to-lemma map."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise LexiconInvalid(f"cannot read lexicon: {exc}") from exc
    if not isinstance(doc, dict):
        raise LexiconInvalid("lexicon must be a JSON object")
    table: dict[str, list[tuple[str, float]]] = {}
    for token, entries in doc.items():
        if not isinstance(entries, list):
            raise LexiconInvalid(f"entry for {token!r} is not a list")
        cleaned: list[tuple[str, float]] = []
        seen: set[str] = set()
        for item in entries:
            if (
                not isinstance(item, (list, tuple))
                or len(item) != 2
                or not isinstance(item[0], str)
                or not isinstance(item[1], (int, float))
                or item[1] < 0
            ):
                raise LexiconInvalid(f"bad weighted lemma {item!r} under {token!r}")
            if item[0] not in seen:
                seen.add(item[0])
                cleaned.append((item[0], float(item[1])))
        table[token] = cleaned
    return HintLexicon(table)
