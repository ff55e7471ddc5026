"""Candidate featurization and learned reranking models.

The model family is deliberately small: a 32-dimensional feature vector and a
linear scorer squashed to [0, 1], trained either as a logistic classifier on
verifier acceptance, as advantage-weighted regression over logged episodes,
or as a fitted linear Q function.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import CorruptModel, DimensionMismatch, FormatVersionMismatch
from .proposer import ProposalContext
from .verifier import parse_subgoal_count

FEATURE_DIM = 32

#: First-method-token vocabulary for the one-hot block (slots 9..20).
TACTIC_VOCAB = (
    "simp", "auto", "blast", "fastforce", "force", "metis",
    "induction", "cases", "rule", "arith", "intro", "elim",
)
_VOCAB_INDEX = {name: i for i, name in enumerate(TACTIC_VOCAB)}

_METHOD_TOKEN_RE = re.compile(r"^(?:apply|by)?\s*\(?\s*([A-Za-z_]+)")
_NAT_RE = re.compile(r"\bSuc\b|\bnat\b|\b\d+\b")
_LISTY_RE = re.compile(r"#|@|\[\]|\bCons\b|\bNil\b")

MODEL_FORMAT_VERSION = "v1"
ADVANTAGE_CLAMP = 5.0
COMPLETION_BONUS = 10.0


def _method_token(candidate: str) -> str:
    m = _METHOD_TOKEN_RE.match(candidate.strip())
    token = m.group(1) if m else ""
    return "" if token in ("apply", "by", "done") else token


def featurize(
    ctx: ProposalContext,
    candidate: str,
    premise_stats: Optional[Sequence[float]] = None,
    *,
    elapsed_s: float = 0.0,
    cache_hit: bool = False,
) -> np.ndarray:
    """Deterministic 32-dim feature vector for one candidate step.

    Layout: [0..3] search context (depth, subgoals or -1 when unknown,
    elapsed seconds, cache-hit flag); [4..8] goal/state flags (listy, natty,
    sety, quantifier, boolean); [9..20] one-hot tactic prefix; [21..24]
    premise-interaction stats; [25..31] padding.
    """
    v = np.zeros(FEATURE_DIM)
    v[0] = ctx.depth
    n = parse_subgoal_count(ctx.state_hint)
    v[1] = -1.0 if n is None else float(n)
    v[2] = elapsed_s
    v[3] = 1.0 if cache_hit else 0.0
    text = ctx.goal + "\n" + ctx.state_hint
    v[4] = 1.0 if _LISTY_RE.search(text) else 0.0
    v[5] = 1.0 if _NAT_RE.search(text) else 0.0
    v[6] = 1.0 if any(c in text for c in "∈⊆∪") else 0.0
    v[7] = 1.0 if any(c in text for c in "∀∃") else 0.0
    v[8] = 1.0 if any(c in text for c in "∧∨¬⟶") else 0.0
    slot = _VOCAB_INDEX.get(_method_token(candidate))
    if slot is not None:
        v[9 + slot] = 1.0
    if premise_stats is not None:
        stats = list(premise_stats)[:4]
        v[21 : 21 + len(stats)] = stats
    return v


@dataclass
class RerankModel:
    """Linear scorer over feature vectors, squashed to [0, 1] at predict time."""

    kind: str  # "logistic" | "linear_q"
    weights: np.ndarray
    bias: float
    metadata: dict[str, str] = field(default_factory=dict)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _as_features(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.shape != (FEATURE_DIM,):
        raise DimensionMismatch(f"expected {FEATURE_DIM} features, got shape {arr.shape}")
    return arr


def raw_score(model: RerankModel, x) -> float:
    """Unsquashed linear output w.x + b."""
    return float(model.weights @ _as_features(x) + model.bias)


def predict(model: RerankModel, x) -> float:
    """Score in [0, 1]; both model kinds squash through a sigmoid."""
    return float(_sigmoid(np.array([raw_score(model, x)]))[0])


def logistic_objective(
    weights: np.ndarray,
    bias: float,
    X: np.ndarray,
    y: np.ndarray,
    sample_weight: Optional[np.ndarray] = None,
    l2: float = 0.0,
) -> tuple[float, np.ndarray, float]:
    """Weighted-mean log-loss with L2 on the weights, plus its gradient.

    This is the exact objective minimized by the trainers; tests check the
    analytic gradient against finite differences.
    """
    sw = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    z = X @ weights + bias
    p = _sigmoid(z)
    eps = 1e-12
    losses = -(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps))
    total = sw.sum()
    loss = float((sw * losses).sum() / total + 0.5 * l2 * float(weights @ weights))
    residual = sw * (p - y)
    grad_w = X.T @ residual / total + l2 * weights
    grad_b = float(residual.sum() / total)
    return loss, grad_w, grad_b


def _class_weights(y: np.ndarray) -> np.ndarray:
    """Per-example weights inversely proportional to class frequency."""
    n = len(y)
    pos = float(y.sum())
    neg = n - pos
    w = np.ones(n)
    if pos > 0 and neg > 0:
        w[y == 1] = n / (2.0 * pos)
        w[y == 0] = n / (2.0 * neg)
    return w


def _degenerate_model(y: np.ndarray, kind_note: str) -> RerankModel:
    prior = float(np.clip(y.mean(), 1e-6, 1.0 - 1e-6))
    bias = math.log(prior / (1.0 - prior))
    return RerankModel(
        "logistic",
        np.zeros(FEATURE_DIM),
        bias,
        {"degenerate": "true", "trainer": kind_note},
    )


def _fit_logistic(
    X: np.ndarray,
    y: np.ndarray,
    sample_weight: np.ndarray,
    epochs: int,
    learning_rate: float,
    l2: float,
    trainer: str,
) -> RerankModel:
    sw = sample_weight * _class_weights(y)
    w = np.zeros(X.shape[1])
    b = 0.0
    loss = float("nan")
    for _ in range(epochs):
        loss, grad_w, grad_b = logistic_objective(w, b, X, y, sw, l2)
        w = w - learning_rate * grad_w
        b = b - learning_rate * grad_b
    loss, _, _ = logistic_objective(w, b, X, y, sw, l2)
    return RerankModel(
        "logistic", w, b, {"trainer": trainer, "final_loss": repr(loss), "examples": str(len(y))}
    )


def train_logistic(
    dataset: Sequence[tuple],
    epochs: int = 200,
    learning_rate: float = 0.5,
    l2: float = 1e-4,
) -> RerankModel:
    """Gradient descent on class-weighted, L2-regularized log-loss.

    Deterministic for a fixed dataset order.  A single-class dataset yields
    the constant-prior model flagged ``degenerate`` in its metadata.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    X = np.array([_as_features(x) for x, _ in dataset])
    y = np.array([float(label) for _, label in dataset])
    if set(np.unique(y)) - {0.0, 1.0}:
        raise ValueError("labels must be 0/1")
    if len(np.unique(y)) < 2:
        return _degenerate_model(y, "logistic")
    return _fit_logistic(X, y, np.ones(len(y)), epochs, learning_rate, l2, "logistic")


@dataclass
class Transition:
    """One logged action with its reward and successor linkage."""

    x: np.ndarray
    y: int
    reward: float
    next_min_subgoals: Optional[float]
    terminal: bool
    next_x: Optional[np.ndarray] = None


def build_rewards(episode: Sequence) -> list[Transition]:
    """Turn one run's ordered attempts into reward-labelled transitions.

    Accepted steps earn the subgoal reduction (0 when counts are unknown),
    rejected steps earn 0, and the last accepted finisher of a solved run
    earns the completion bonus and the terminal flag.  Each transition links
    to the feature vector of the next attempt in sequence.
    """
    records = [a for a in episode if getattr(a, "x", None) is not None]
    terminal_i = None
    for i, rec in enumerate(records):
        if rec.success and (getattr(rec, "kind", "") == "finisher" or rec.n_after == 0):
            terminal_i = i
    out: list[Transition] = []
    for i, rec in enumerate(records):
        if rec.success and rec.n_before is not None and rec.n_after is not None:
            reward = float(rec.n_before - rec.n_after)
        else:
            reward = 0.0
        terminal = i == terminal_i
        if terminal:
            reward += COMPLETION_BONUS
        next_x = np.asarray(records[i + 1].x, dtype=float) if i + 1 < len(records) else None
        next_n = float(rec.n_after) if rec.n_after is not None else None
        out.append(
            Transition(np.asarray(rec.x, dtype=float), int(bool(rec.success)), reward, next_n, terminal, next_x)
        )
    return out


def _bucket(x: np.ndarray) -> tuple[float, float]:
    return float(x[0]), float(x[1])


def train_awr(
    transitions: Sequence[Transition],
    beta: float,
    epochs: int = 200,
    learning_rate: float = 0.5,
    l2: float = 1e-4,
) -> RerankModel:
    """Advantage-weighted regression over logged transitions.

    Advantages are rewards centred on their (depth, subgoals-before) bucket
    mean; example weights are the clamped exponentiated advantages feeding a
    weighted logistic fit on acceptance labels.  Constant rewards make every
    weight one, so the result coincides with plain logistic training.
    """
    if not transitions:
        raise ValueError("no transitions")
    if beta <= 0:
        raise ValueError("beta must be > 0")
    buckets: dict[tuple[float, float], list[float]] = {}
    for t in transitions:
        buckets.setdefault(_bucket(t.x), []).append(t.reward)
    means = {k: sum(v) / len(v) for k, v in buckets.items()}
    weights = np.array(
        [
            math.exp(min(ADVANTAGE_CLAMP, max(-ADVANTAGE_CLAMP, (t.reward - means[_bucket(t.x)]) / beta)))
            for t in transitions
        ]
    )
    X = np.array([_as_features(t.x) for t in transitions])
    y = np.array([float(t.y) for t in transitions])
    if len(np.unique(y)) < 2:
        return _degenerate_model(y, "awr")
    model = _fit_logistic(X, y, weights, epochs, learning_rate, l2, "awr")
    model.metadata["beta"] = repr(beta)
    return model


def train_fitted_q(
    transitions: Sequence[Transition], gamma: float, iterations: int = 50
) -> RerankModel:
    """Fitted linear Q iteration over logged transitions.

    Targets are ``r + gamma * Q(next)`` (zero at terminals or when no
    successor was logged), refit by least squares each iteration.  With
    ``gamma == 0`` this reduces to a single least-squares pass on rewards.
    """
    if not transitions:
        raise ValueError("no transitions")
    if not 0 <= gamma < 1:
        raise ValueError("gamma must be in [0, 1)")
    X = np.array([_as_features(t.x) for t in transitions])
    rewards = np.array([t.reward for t in transitions])
    design = np.hstack([X, np.ones((len(X), 1))])
    w = np.zeros(FEATURE_DIM)
    b = 0.0
    for _ in range(max(1, iterations)):
        boot = np.zeros(len(transitions))
        if gamma > 0:
            for i, t in enumerate(transitions):
                if not t.terminal and t.next_x is not None:
                    boot[i] = float(w @ t.next_x + b)
        targets = rewards + gamma * boot
        theta, *_ = np.linalg.lstsq(design, targets, rcond=None)
        w, b = theta[:-1], float(theta[-1])
    return RerankModel(
        "linear_q", w, b, {"trainer": "fitted_q", "gamma": repr(gamma), "examples": str(len(X))}
    )


def save_model(model: RerankModel, path) -> None:
    """Write the versioned self-describing text format."""
    lines = [
        f"RERANK {MODEL_FORMAT_VERSION} {model.kind}",
        repr(model.bias),
        " ".join(repr(float(w)) for w in model.weights),
    ]
    for key in sorted(model.metadata):
        lines.append(f"meta {key}={model.metadata[key]}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> RerankModel:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("RERANK "):
        raise CorruptModel("missing RERANK header")
    parts = lines[0].split()
    if len(parts) != 3:
        raise CorruptModel(f"bad header: {lines[0]!r}")
    _, version, kind = parts
    if version != MODEL_FORMAT_VERSION:
        raise FormatVersionMismatch(f"unsupported model version {version!r}")
    if kind not in ("logistic", "linear_q"):
        raise CorruptModel(f"unknown model kind {kind!r}")
    if len(lines) < 3:
        raise CorruptModel("truncated model file")
    try:
        bias = float(lines[1])
        weights = np.array([float(t) for t in lines[2].split()])
    except ValueError as exc:
        raise CorruptModel(f"unparseable numbers: {exc}") from exc
    if weights.shape != (FEATURE_DIM,):
        raise CorruptModel(f"expected {FEATURE_DIM} weights, got {len(weights)}")
    metadata = {}
    for line in lines[3:]:
        if line.startswith("meta ") and "=" in line:
            key, _, value = line[5:].partition("=")
            metadata[key] = value
    return RerankModel(kind, weights, bias, metadata)
