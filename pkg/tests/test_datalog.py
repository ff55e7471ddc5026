"""Logging and dataset-builder tests."""

from __future__ import annotations

import json
import threading

import numpy as np
import pytest

from proofsearch.datalog import (
    AttemptRecord,
    LogSink,
    RunLogger,
    RunRecord,
    attempt_from_dict,
    attempt_to_dict,
    build_premise_dataset,
    build_repair_dataset,
    build_reranker_dataset,
    build_trajectories,
    read_attempts,
    read_runs,
    run_to_dict,
)
from proofsearch.errors import SinkUnavailable
from proofsearch.rerank import FEATURE_DIM


def _x(seed: float = 0.0) -> list[float]:
    return [float(seed)] * FEATURE_DIM


def write_attempts(path, records):
    with LogSink(path) as sink:
        for rec in records:
            sink.log_attempt(rec)


def attempt(seq, **kw):
    defaults = dict(run_id="r1", kind="step", goal="G", success=False)
    defaults.update(kw)
    return AttemptRecord(seq=seq, **defaults)


class TestSinkBasics:
    def test_one_line_per_attempt(self, tmp_path):
        write_attempts(tmp_path, [attempt(i) for i in range(1, 4)])
        lines = (tmp_path / "attempts.jsonl").read_text().strip().split("\n")
        assert len(lines) == 3
        for line in lines:
            json.loads(line)  # each parses independently

    def test_append_only_across_reopen(self, tmp_path):
        write_attempts(tmp_path, [attempt(1)])
        before = (tmp_path / "attempts.jsonl").read_text()
        write_attempts(tmp_path, [attempt(2)])
        after = (tmp_path / "attempts.jsonl").read_text()
        assert after.startswith(before)
        assert len(after.strip().split("\n")) == 2

    def test_closed_sink_raises(self, tmp_path):
        sink = LogSink(tmp_path)
        sink.close()
        with pytest.raises(SinkUnavailable):
            sink.log_attempt(attempt(1))

    def test_concurrent_appends_no_partial_lines(self, tmp_path):
        with LogSink(tmp_path) as sink:
            def worker(run):
                logger = RunLogger(sink, f"run-{run}", "G")
                for _ in range(50):
                    logger.attempt(kind="step", action="apply simp", success=True)

            threads = [threading.Thread(target=worker, args=(i,)) for i in range(4)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
        records = read_attempts(tmp_path / "attempts.jsonl")
        assert len(records) == 200
        for run in range(4):
            seqs = [r.seq for r in records if r.run_id == f"run-{run}"]
            assert sorted(seqs) == list(range(1, 51))

    def test_run_record_round_trip(self, tmp_path):
        record = RunRecord(
            run_id="r1", goal_id="gid", goal="G", mode="stepwise",
            config={"beam": 4}, models={"reranker": None}, runtime_s=1.25,
            timeout=False, success=True, proof='lemma "G"\nby simp',
            stats={"expansions": 7},
        )
        with LogSink(tmp_path) as sink:
            sink.log_run(record)
        (loaded,) = read_runs(tmp_path / "runs.jsonl")
        assert run_to_dict(loaded) == run_to_dict(record)

    def test_attempt_round_trip_field_equal(self, tmp_path):
        record = attempt(
            1, success=True, n_before=3, n_after=1, elapsed_ms=2.5, cache_hit=True,
            depth=2, x=_x(0.5), pool=["L1"], score_key=-1.5, f_score=0.75,
            block_kind="have_show", stage=1, tag="stage=1", hole="abc", fp="def",
            ban_size=2, ce=["COUNTEREXAMPLE: x = 0"], eff_goal="Q y",
        )
        write_attempts(tmp_path, [record])
        (loaded,) = read_attempts(tmp_path / "attempts.jsonl")
        assert attempt_to_dict(loaded) == attempt_to_dict(record)

    def test_unknown_fields_preserved(self):
        doc = attempt_to_dict(attempt(1))
        doc["future_field"] = [1, 2, 3]
        loaded = attempt_from_dict(doc)
        assert loaded.extra["future_field"] == [1, 2, 3]
        assert attempt_to_dict(loaded)["future_field"] == [1, 2, 3]


class TestRerankerDataset:
    def test_binary_counts(self, tmp_path):
        records = [
            attempt(i, success=i <= 4, x=_x(i)) for i in range(1, 11)
        ]
        write_attempts(tmp_path, records)
        examples, skipped = build_reranker_dataset(tmp_path / "attempts.jsonl", "binary")
        assert len(examples) == 10 and skipped == 0
        assert sum(y for _, y in examples) == 4

    def test_episode_reconstruction(self, tmp_path):
        records = [
            attempt(1, success=True, n_before=3, n_after=2, x=_x(1)),
            attempt(2, success=True, n_before=2, n_after=1, x=_x(2)),
            attempt(3, kind="finisher", success=True, n_before=1, n_after=0, x=_x(3)),
        ]
        write_attempts(tmp_path, records)
        transitions, skipped = build_reranker_dataset(tmp_path / "attempts.jsonl", "q")
        assert len(transitions) == 3 and skipped == 0
        assert transitions[-1].terminal
        assert transitions[-1].reward == pytest.approx(1 + 10)

    def test_corrupted_line_skipped(self, tmp_path):
        write_attempts(tmp_path, [attempt(i, x=_x(i)) for i in range(1, 6)])
        path = tmp_path / "attempts.jsonl"
        lines = path.read_text().strip().split("\n")
        lines[2] = '{"broken": '
        path.write_text("\n".join(lines) + "\n")
        examples, skipped = build_reranker_dataset(path, "binary")
        assert len(examples) == 4 and skipped == 1

    def test_awr_mode_returns_transitions(self, tmp_path):
        write_attempts(
            tmp_path, [attempt(1, success=True, n_before=2, n_after=1, x=_x())]
        )
        transitions, _ = build_reranker_dataset(tmp_path / "attempts.jsonl", "awr")
        assert len(transitions) == 1 and transitions[0].reward == 1.0

    def test_unknown_mode(self, tmp_path):
        write_attempts(tmp_path, [attempt(1)])
        with pytest.raises(ValueError):
            build_reranker_dataset(tmp_path / "attempts.jsonl", "banana")


class TestTrajectories:
    def test_rewards_with_bonus(self, tmp_path):
        records = [
            attempt(1, success=True, n_before=3, n_after=2, x=_x(1)),
            attempt(2, kind="finisher", success=True, n_before=2, n_after=0, x=_x(2)),
        ]
        write_attempts(tmp_path, records)
        (episode,), skipped = build_trajectories(tmp_path / "attempts.jsonl")
        assert [t.reward for t in episode] == [1.0, 2.0 + 10.0]

    def test_no_accepted_steps_no_features(self, tmp_path):
        write_attempts(tmp_path, [attempt(1, success=False)])  # no feature vector
        episodes, _ = build_trajectories(tmp_path / "attempts.jsonl")
        assert episodes == []

    def test_interleaved_runs_separated(self, tmp_path):
        records = [
            attempt(1, run_id="a", success=True, n_before=2, n_after=1, x=_x(1)),
            attempt(1, run_id="b", success=True, n_before=4, n_after=3, x=_x(2)),
            attempt(2, run_id="a", kind="finisher", success=True, n_before=1, n_after=0, x=_x(3)),
            attempt(2, run_id="b", success=False, n_before=3, n_after=None, x=_x(4)),
        ]
        write_attempts(tmp_path, records)
        episodes, _ = build_trajectories(tmp_path / "attempts.jsonl")
        assert len(episodes) == 2
        assert [len(ep) for ep in episodes] == [2, 2]
        assert episodes[0][-1].terminal and not episodes[1][-1].terminal

    def test_unknown_counts_reward_zero(self, tmp_path):
        write_attempts(
            tmp_path, [attempt(1, success=True, n_before=None, n_after=None, x=_x())]
        )
        (episode,), _ = build_trajectories(tmp_path / "attempts.jsonl")
        assert episode[0].reward == 0.0


class TestPremiseDataset:
    def test_pairs_from_successful_attempts(self, tmp_path):
        records = [
            attempt(1, success=True, action="by (metis L1 L2)", pool=["L1", "L2", "L3", "L4"]),
            attempt(2, success=False, action="by (metis L3)", pool=["L3", "L4"]),
        ]
        write_attempts(tmp_path, records)
        pairs, skipped = build_premise_dataset(tmp_path / "attempts.jsonl")
        assert {(g, p) for g, p, _ in pairs} == {("G", "L1"), ("G", "L2")}

    def test_deterministic(self, tmp_path):
        records = [
            attempt(1, success=True, action="by (rule L1)", pool=[f"L{i}" for i in range(1, 9)])
        ]
        write_attempts(tmp_path, records)
        a, _ = build_premise_dataset(tmp_path / "attempts.jsonl", seed=3)
        b, _ = build_premise_dataset(tmp_path / "attempts.jsonl", seed=3)
        assert a == b


class TestRepairDataset:
    def test_records_per_repair(self, tmp_path):
        records = [
            attempt(
                1, kind="repair", success=False, stage=1, block_kind="have_show",
                hole="h1", fp="f1", ban_size=0, eff_goal="Q", ce=["COUNTEREXAMPLE: x = 0"],
                tag="stage=1",
            ),
            attempt(
                2, kind="repair", success=True, stage=1, block_kind="have_show",
                hole="h1", fp="f2", ban_size=1, eff_goal="Q", tag="stage=1",
            ),
            attempt(3, kind="step", success=True, x=_x()),
        ]
        write_attempts(tmp_path, records)
        out, skipped = build_repair_dataset(tmp_path / "attempts.jsonl")
        assert len(out) == 2
        assert {r["hole"] for r in out} == {"h1"}
        assert out[0]["verdict"] == "failed" and out[1]["verdict"] == "verified"
        assert out[0]["counterexamples"] == ["COUNTEREXAMPLE: x = 0"]

    def test_no_repairs_empty(self, tmp_path):
        write_attempts(tmp_path, [attempt(1, kind="step", x=_x())])
        out, _ = build_repair_dataset(tmp_path / "attempts.jsonl")
        assert out == []


class TestBuilderPurity:
    def test_same_file_same_output(self, tmp_path):
        records = [
            attempt(i, success=i % 2 == 0, n_before=3, n_after=2, x=_x(i))
            for i in range(1, 8)
        ]
        write_attempts(tmp_path, records)
        path = tmp_path / "attempts.jsonl"
        a, _ = build_reranker_dataset(path, "binary")
        b, _ = build_reranker_dataset(path, "binary")
        assert a == b
        ta, _ = build_trajectories(path)
        tb, _ = build_trajectories(path)
        assert len(ta) == len(tb)
        for ea, eb in zip(ta, tb):
            for x, y in zip(ea, eb):
                assert np.array_equal(x.x, y.x) and x.reward == y.reward
