"""Append-only JSONL logging of runs and attempts, plus dataset builders.

Every verifier-evaluated action becomes one attempt line; run summaries go to
a separate file.  The offline builders turn raw logs into reranker examples,
RL trajectories, contrastive premise pairs, and repair records.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterator, Optional

from .errors import MalformedRecord, SinkUnavailable
from .premises import extract_training_pairs
from .rerank import Transition, build_rewards

SCHEMA_VERSION = 1

RUNS_FILENAME = "runs.jsonl"
ATTEMPTS_FILENAME = "attempts.jsonl"

ATTEMPT_KINDS = ("step", "finisher", "fill", "repair", "regeneration")


@dataclass
class RunRecord:
    """Summary of one prover or planner invocation."""

    run_id: str
    goal_id: str
    goal: str
    mode: str
    config: dict = field(default_factory=dict)
    models: dict = field(default_factory=dict)
    runtime_s: float = 0.0
    timeout: bool = False
    success: bool = False
    proof: Optional[str] = None
    stats: dict = field(default_factory=dict)
    ts: int = 0
    v: int = SCHEMA_VERSION
    extra: dict = field(default_factory=dict)


@dataclass
class AttemptRecord:
    """One verifier-evaluated action with its features, label and state delta."""

    run_id: str
    seq: int
    kind: str
    goal: str
    prefix_fp: str = ""
    action: str = ""
    success: bool = False
    n_before: Optional[int] = None
    n_after: Optional[int] = None
    elapsed_ms: float = 0.0
    cache_hit: bool = False
    depth: Optional[int] = None
    stage: Optional[int] = None
    x: Optional[list] = None
    pool: list = field(default_factory=list)
    hints_used: list = field(default_factory=list)
    block_kind: Optional[str] = None
    tag: Optional[str] = None
    hole: Optional[str] = None
    eff_goal: Optional[str] = None
    ce: list = field(default_factory=list)
    fp: Optional[str] = None
    ban_size: Optional[int] = None
    score_key: Optional[float] = None
    f_score: Optional[float] = None
    ts: int = 0
    v: int = SCHEMA_VERSION
    extra: dict = field(default_factory=dict)


def _to_dict(record) -> dict:
    doc = {}
    for f in fields(record):
        if f.name == "extra":
            continue
        doc[f.name] = getattr(record, f.name)
    doc.update(record.extra)
    return doc


def _from_dict(cls, doc: dict):
    known = {f.name for f in fields(cls)} - {"extra"}
    kwargs = {k: v for k, v in doc.items() if k in known}
    extra = {k: v for k, v in doc.items() if k not in known}
    try:
        return cls(**kwargs, extra=extra)
    except TypeError as exc:
        raise MalformedRecord(str(exc)) from exc


def run_to_dict(record: RunRecord) -> dict:
    return _to_dict(record)


def attempt_to_dict(record: AttemptRecord) -> dict:
    return _to_dict(record)


def run_from_dict(doc: dict) -> RunRecord:
    return _from_dict(RunRecord, doc)


def attempt_from_dict(doc: dict) -> AttemptRecord:
    return _from_dict(AttemptRecord, doc)


def _now_ms() -> int:
    return int(time.time() * 1000)


class LogSink:
    """Line-atomic JSONL writer for one log directory.

    A single lock serializes appends from concurrent search workers; each
    record is written as one complete line.  Attempt writes are buffered,
    run writes flush both files (a run write marks the end of a run).
    """

    def __init__(self, log_dir):
        self.dir = Path(log_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._runs = open(self.dir / RUNS_FILENAME, "a", encoding="utf-8")
        self._attempts = open(self.dir / ATTEMPTS_FILENAME, "a", encoding="utf-8")
        self._closed = False

    @property
    def runs_path(self) -> Path:
        return self.dir / RUNS_FILENAME

    @property
    def attempts_path(self) -> Path:
        return self.dir / ATTEMPTS_FILENAME

    def _write(self, handle, doc: dict) -> None:
        if self._closed:
            raise SinkUnavailable("sink is closed")
        line = json.dumps(doc, ensure_ascii=False) + "\n"
        with self._lock:
            handle.write(line)

    def log_attempt(self, record: AttemptRecord) -> None:
        if not record.ts:
            record.ts = _now_ms()
        self._write(self._attempts, attempt_to_dict(record))

    def log_run(self, record: RunRecord) -> None:
        if not record.ts:
            record.ts = _now_ms()
        self._write(self._runs, run_to_dict(record))
        self.flush()

    def flush(self) -> None:
        with self._lock:
            if not self._closed:
                self._runs.flush()
                self._attempts.flush()

    def close(self) -> None:
        with self._lock:
            if not self._closed:
                self._runs.flush()
                self._attempts.flush()
                self._runs.close()
                self._attempts.close()
                self._closed = True

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def log_run(sink: LogSink, record: RunRecord) -> None:
    sink.log_run(record)


def log_attempt(sink: LogSink, record: AttemptRecord) -> None:
    sink.log_attempt(record)


class RunLogger:
    """Per-run attempt logger with a monotonically increasing sequence."""

    def __init__(self, sink: Optional[LogSink], run_id: str, goal: str):
        self.sink = sink
        self.run_id = run_id
        self.goal = goal
        self._seq = 0
        self._lock = threading.Lock()

    def attempt(self, **kwargs) -> Optional[AttemptRecord]:
        if self.sink is None:
            return None
        with self._lock:
            self._seq += 1
            seq = self._seq
        record = AttemptRecord(
            run_id=self.run_id, seq=seq, goal=kwargs.pop("goal", self.goal), **kwargs
        )
        self.sink.log_attempt(record)
        return record

    def run(self, **kwargs) -> Optional[RunRecord]:
        if self.sink is None:
            return None
        record = RunRecord(run_id=self.run_id, goal=kwargs.pop("goal", self.goal), **kwargs)
        self.sink.log_run(record)
        return record


def _iter_jsonl(path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(f"line {lineno}: {exc}") from exc


def read_runs(path) -> list[RunRecord]:
    return [run_from_dict(doc) for _, doc in _iter_jsonl(path)]


def read_attempts(path) -> list[AttemptRecord]:
    return [attempt_from_dict(doc) for _, doc in _iter_jsonl(path)]


def _attempts_with_skips(path) -> tuple[list[AttemptRecord], int]:
    records: list[AttemptRecord] = []
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            try:
                records.append(attempt_from_dict(json.loads(line)))
            except (json.JSONDecodeError, MalformedRecord):
                skipped += 1
    return records, skipped


def _episodes(records: list[AttemptRecord]) -> list[list[AttemptRecord]]:
    by_run: dict[str, list[AttemptRecord]] = {}
    order: list[str] = []
    for rec in records:
        if rec.run_id not in by_run:
            by_run[rec.run_id] = []
            order.append(rec.run_id)
        by_run[rec.run_id].append(rec)
    episodes = []
    for run_id in order:
        episode = sorted(by_run[run_id], key=lambda r: r.seq)
        episodes.append([r for r in episode if r.kind in ("step", "finisher")])
    return episodes


def build_reranker_dataset(
    log_path, label_mode: str = "binary"
) -> tuple[list, int]:
    """Supervised examples or transitions from an attempt log.

    ``binary`` yields (x, y) pairs for every featurized attempt; ``q`` and
    ``awr`` reconstruct per-run episodes and emit reward-labelled
    transitions.  Malformed lines are skipped and counted.
    """
    records, skipped = _attempts_with_skips(log_path)
    if label_mode == "binary":
        examples = [(r.x, int(bool(r.success))) for r in records if r.x is not None]
        return examples, skipped
    if label_mode in ("q", "awr"):
        transitions: list[Transition] = []
        for episode in _episodes(records):
            transitions.extend(build_rewards(episode))
        return transitions, skipped
    raise ValueError(f"unknown label mode: {label_mode}")


def build_trajectories(log_path) -> tuple[list[list[Transition]], int]:
    """Per-run transition sequences with rewards."""
    records, skipped = _attempts_with_skips(log_path)
    episodes = [build_rewards(ep) for ep in _episodes(records)]
    return [ep for ep in episodes if ep], skipped


def build_premise_dataset(
    log_path, n_neg: int = 4, seed: int = 0
) -> tuple[list[tuple[str, str, list[str]]], int]:
    """Contrastive premise pairs from successful attempts carrying pools."""
    records, skipped = _attempts_with_skips(log_path)
    return extract_training_pairs(records, n_neg=n_neg, seed=seed), skipped


def build_repair_dataset(log_path) -> tuple[list[dict], int]:
    """One record per repair attempt: block kind, stage, diagnostics, verdict."""
    records, skipped = _attempts_with_skips(log_path)
    out = []
    for rec in records:
        if rec.kind != "repair":
            continue
        out.append(
            {
                "run_id": rec.run_id,
                "hole": rec.hole,
                "block_kind": rec.block_kind,
                "stage": rec.stage,
                "eff_goal": rec.eff_goal,
                "counterexamples": list(rec.ce),
                "fp": rec.fp,
                "verdict": "verified" if rec.success else "failed",
                "ban_size": rec.ban_size,
                "tag": rec.tag,
            }
        )
    return out, skipped
