"""Premise index with two-stage retrieval and contrastive pair extraction.

The select stage is recall-oriented (TF-IDF cosine or token-set Jaccard);
the rerank stage is an optional precision pass behind a pluggable pair
scorer, falling back to the select scores when absent.
"""

from __future__ import annotations

import math
import random
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

from .errors import EmptyIndex, StaleIndex
from .tokens import tokenize

DEFAULT_NEGATIVES = 4


@dataclass
class PremiseEntry:
    """One library lemma: identifier, statement text, provenance metadata."""

    id: str
    text: str
    metadata: dict = field(default_factory=dict)


class PremiseIndex:
    """In-memory premise store; retrieval requires finalization."""

    def __init__(self, entries: Iterable[PremiseEntry] = ()):
        self.entries: list[PremiseEntry] = list(entries)
        self.finalized = False
        self._vectors: dict[str, dict[str, float]] = {}
        self._token_sets: dict[str, frozenset[str]] = {}
        self._idf: dict[str, float] = {}

    def add(self, entry: PremiseEntry) -> None:
        self.entries.append(entry)
        self.finalized = False

    def __len__(self) -> int:
        return len(self.entries)


def _l2_normalize(vec: dict[str, float]) -> dict[str, float]:
    norm = math.sqrt(sum(w * w for w in vec.values()))
    if norm == 0:
        return dict(vec)
    return {t: w / norm for t, w in vec.items()}


def finalize(index: PremiseIndex) -> PremiseIndex:
    """Tokenize and cache per-entry representations.

    TF-IDF uses smoothed idf ``ln((1+N)/(1+df)) + 1`` over raw term counts,
    L2-normalized; the overlap backend caches plain token sets.
    """
    if not index.entries:
        raise EmptyIndex("cannot finalize an empty premise index")
    seen_ids: set[str] = set()
    token_lists: dict[str, list[str]] = {}
    for entry in index.entries:
        if entry.id in seen_ids:
            raise ValueError(f"duplicate premise id {entry.id!r}")
        seen_ids.add(entry.id)
        token_lists[entry.id] = tokenize(entry.text)
    n_docs = len(index.entries)
    df: dict[str, int] = {}
    for toks in token_lists.values():
        for t in set(toks):
            df[t] = df.get(t, 0) + 1
    index._idf = {t: math.log((1 + n_docs) / (1 + c)) + 1.0 for t, c in df.items()}
    index._token_sets = {eid: frozenset(toks) for eid, toks in token_lists.items()}
    index._vectors = {}
    for eid, toks in token_lists.items():
        tf: dict[str, float] = {}
        for t in toks:
            tf[t] = tf.get(t, 0.0) + 1.0
        index._vectors[eid] = _l2_normalize({t: c * index._idf[t] for t, c in tf.items()})
    index.finalized = True
    return index


def _query_vector(index: PremiseIndex, goal: str) -> dict[str, float]:
    tf: dict[str, float] = {}
    for t in tokenize(goal):
        if t in index._idf:
            tf[t] = tf.get(t, 0.0) + 1.0
    return _l2_normalize({t: c * index._idf[t] for t, c in tf.items()})


def jaccard(a: "frozenset[str] | set[str]", b: "frozenset[str] | set[str]") -> float:
    if not a and not b:
        return 1.0
    union = len(a | b)
    return len(a & b) / union if union else 1.0


def select(
    index: PremiseIndex, goal: str, k_select: int, backend: str = "tfidf"
) -> list[tuple[str, float]]:
    """Recall stage: top ``k_select`` premises, ties broken by id ascending."""
    if not index.finalized:
        raise StaleIndex("index must be finalized before retrieval")
    if backend == "tfidf":
        q = _query_vector(index, goal)
        scored = [
            (eid, sum(q.get(t, 0.0) * w for t, w in vec.items()))
            for eid, vec in index._vectors.items()
        ]
    elif backend == "overlap":
        q_tokens = frozenset(tokenize(goal))
        scored = [(eid, jaccard(q_tokens, toks)) for eid, toks in index._token_sets.items()]
    else:
        raise ValueError(f"unknown select backend: {backend}")
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[: max(0, k_select)]


@dataclass
class RetrievalResult:
    """Two-stage retrieval output: (id, select score, rerank score) tuples."""

    ranked: list[tuple[str, float, float]]
    k_select: int
    k_rerank: int


PairScorer = Callable[[str, str], float]


def rerank(
    index: PremiseIndex,
    goal: str,
    pool: Sequence[tuple[str, float]],
    k_rerank: int,
    scorer: Optional[PairScorer] = None,
) -> RetrievalResult:
    """Precision stage: rescore the head of the pool with a pair scorer.

    Without a scorer the select score is reused and the order is unchanged;
    the tail always keeps its select ordering after the reranked head.
    """
    texts = {e.id: e.text for e in index.entries}
    if scorer is None or k_rerank <= 0:
        ranked = [(eid, s, s) for eid, s in pool]
        return RetrievalResult(ranked, len(pool), max(0, k_rerank))
    head = [(eid, s, float(scorer(goal, texts.get(eid, eid)))) for eid, s in pool[:k_rerank]]
    head.sort(key=lambda t: (-t[2], t[0]))
    tail = [(eid, s, s) for eid, s in pool[k_rerank:]]
    return RetrievalResult(head + tail, len(pool), k_rerank)


_TOKEN_BOUNDARY = r"(?<![A-Za-z0-9_]){}(?![A-Za-z0-9_])"


def premise_stats(
    goal: str, retrieved: Optional[RetrievalResult], candidate: str
) -> tuple[float, float, float, float]:
    """Four summary numbers for the feature vector.

    (top select score, mean select score, count of retrieved ids referenced
    by the candidate text, retrieved count); all zeros without retrieval.
    """
    if retrieved is None or not retrieved.ranked:
        return (0.0, 0.0, 0.0, 0.0)
    scores = [s for _, s, _ in retrieved.ranked]
    overlap = sum(
        1
        for eid, _, _ in retrieved.ranked
        if re.search(_TOKEN_BOUNDARY.format(re.escape(eid)), candidate)
    )
    return (max(scores), sum(scores) / len(scores), float(overlap), float(len(scores)))


def extract_training_pairs(
    attempts: Iterable, n_neg: int = DEFAULT_NEGATIVES, seed: int = 0
) -> list[tuple[str, str, list[str]]]:
    """Contrastive pairs from successful attempts that carried retrieval pools.

    Premise ids named in the action text are positives; negatives are sampled
    (seeded, hence reproducible) from the rest of the attempt's pool.
    """
    rng = random.Random(seed)
    pairs: list[tuple[str, str, list[str]]] = []
    for attempt in attempts:
        if not getattr(attempt, "success", False):
            continue
        pool = list(getattr(attempt, "pool", None) or ())
        action = getattr(attempt, "action", "") or ""
        goal = getattr(attempt, "goal", "") or ""
        if not pool or not action:
            continue
        positives = [
            eid for eid in pool if re.search(_TOKEN_BOUNDARY.format(re.escape(eid)), action)
        ]
        if not positives:
            continue
        negatives_pool = [eid for eid in pool if eid not in positives]
        for pos in positives:
            negs = (
                rng.sample(negatives_pool, min(n_neg, len(negatives_pool)))
                if negatives_pool
                else []
            )
            pairs.append((goal, pos, negs))
    return pairs
