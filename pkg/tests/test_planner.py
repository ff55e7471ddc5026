"""Planner tests: outline scoring, fill, repair, escalation, the auto driver."""

from __future__ import annotations

import dataclasses

import pytest

from proofsearch.datalog import LogSink, RunLogger, read_attempts
from proofsearch.hints import HintSet
from proofsearch.planner import (
    Components,
    PlannerConfig,
    PlannerState,
    cegis_repair,
    counterexample_hints,
    earliest_failure_line,
    effective_goal,
    escalate,
    fill_hole,
    plan_auto,
    sample_outlines,
    score_outline,
    select_focus,
)
from proofsearch.proposer import OracleProposer, ScriptedProposer
from proofsearch.script import find_holes, parse_script
from proofsearch.verifier import (
    MockBackend,
    RunStats,
    SpaceNode,
    SyntheticSpace,
    verify_full,
)

GAPPED_ISAR = 'lemma "G"\nproof -\n  show "G"\n    sorry\nqed'


@pytest.fixture
def isar_backend(isar_space):
    return MockBackend(isar_space)


def quiet_cfg(**overrides) -> PlannerConfig:
    base = dict(
        samples_per_temp=1,
        temperatures=(0.5,),
        global_budget_s=20.0,
        fill_budget_s=2.0,
        repair_budget_s=2.0,
        repair_max_proposals=2,
    )
    base.update(overrides)
    return PlannerConfig(**base)


class TestSampleOutlines:
    def test_cardinality_and_dedup(self):
        prop = ScriptedProposer({"outline:*": ['lemma "G"', "  sorry"]})
        cfg = quiet_cfg(samples_per_temp=2, temperatures=(0.3, 0.7))
        outlines = sample_outlines("G", HintSet(), cfg, prop)
        assert len(outlines) == 1  # same text at both temperatures collapses

    def test_distinct_samples_kept(self):
        prop = ScriptedProposer(
            {"outline:*": [['lemma "G"', "  sorry"], ['lemma "G"', "apply a", "  sorry"]]}
        )
        cfg = quiet_cfg(samples_per_temp=2, temperatures=(0.5,))
        outlines = sample_outlines("G", HintSet(), cfg, prop)
        assert len(outlines) == 2

    def test_unsalvageable_dropped(self):
        prop = ScriptedProposer({"outline:*": ["no proof here, good luck"]})
        assert sample_outlines("G", HintSet(), quiet_cfg(), prop) == []

    def test_bounded_by_temps_times_k(self):
        prop = ScriptedProposer(
            {"outline:*": [[f'lemma "G"', f"apply a{i}", "  sorry"] for i in range(20)]}
        )
        cfg = quiet_cfg(samples_per_temp=2, temperatures=(0.3, 0.7))
        assert len(sample_outlines("G", HintSet(), cfg, prop)) <= 4


class TestScoreOutline:
    def test_clean_gapped_outline(self, isar_backend):
        outline = parse_script(GAPPED_ISAR)
        hints = HintSet(("G",), ("ctx",))
        # checks_clean=1, holes=1, bonus=1 -> 10 - 1 + 1 = 10
        score = score_outline(outline, isar_backend, hints, (10.0, 1.0, 1.0))
        assert score == pytest.approx(10.0)

    def test_rejected_outline(self, isar_backend):
        outline = parse_script('lemma "G"\napply junk\nsorry\nsorry\nsorry')
        score = score_outline(outline, isar_backend, HintSet(), (10.0, 1.0, 1.0))
        assert score == pytest.approx(-3.0)

    def test_gamma_zero_ignores_hints(self, isar_backend):
        outline = parse_script(GAPPED_ISAR)
        with_hints = score_outline(
            outline, isar_backend, HintSet(("G",), ("ctx",)), (10.0, 1.0, 0.0)
        )
        without = score_outline(outline, isar_backend, HintSet(), (10.0, 1.0, 0.0))
        assert with_hints == without


class TestEffectiveGoal:
    def test_extracts_first_subgoal(self, isar_backend, isar_space):
        script = parse_script(GAPPED_ISAR)
        (hole,) = find_holes(script)
        assert effective_goal(isar_backend, script, hole, "orig") == "G"

    def test_unparseable_state_falls_back(self, isar_backend):
        script = parse_script('lemma "G"\napply bogus\nsorry')
        (hole,) = find_holes(script)
        assert effective_goal(isar_backend, script, hole, "orig") == "orig"

    def test_backend_crash_falls_back(self):
        class Broken:
            def check_theory(self, theory, timeout_s=None):
                raise RuntimeError("dead")

            def restart(self):
                pass

            def refute(self, goal, timeout_s=None):
                return None

        script = parse_script('lemma "G"\nsorry')
        (hole,) = find_holes(script)
        assert effective_goal(Broken(), script, hole, "orig") == "orig"


class TestEarliestFailureLine:
    def test_earlier_error_wins(self, isar_backend):
        script = parse_script('lemma "G"\napply bad\nproof -\n  show "G"\n    sorry\nqed')
        holes = find_holes(script)
        assert earliest_failure_line(isar_backend, script, holes[0]) == 1

    def test_no_earlier_error(self, isar_backend):
        script = parse_script(GAPPED_ISAR)
        (hole,) = find_holes(script)
        assert earliest_failure_line(isar_backend, script, hole) == hole.start_line

    def test_clamped_to_one(self, linear_backend):
        # An error on the header line is clamped up to line 1.
        script = parse_script('lemma "G"\nsorry')
        (hole,) = find_holes(script)
        assert earliest_failure_line(linear_backend, script, hole) >= 1


class TestCounterexampleHints:
    def test_binding_formatting(self, isar_space):
        space = dataclasses.replace(isar_space, refutable={"G": (("x", "0"), ("y", "Nil"))})
        backend = MockBackend(space)
        lines = counterexample_hints(backend, "goal (1 subgoal):\n 1. G")
        assert lines == ["COUNTEREXAMPLE: x = 0", "COUNTEREXAMPLE: y = Nil"]

    def test_no_report(self, isar_backend):
        assert counterexample_hints(isar_backend, "goal (1 subgoal):\n 1. G") == []

    def test_empty_state(self, isar_backend):
        assert counterexample_hints(isar_backend, "") == []


class TestFillHole:
    def test_verified_fill(self, linear_space):
        backend = MockBackend(linear_space)
        comps = Components(backend=backend, proposer=OracleProposer(linear_space))
        script = parse_script('lemma "G"\napply step_one\nsorry')
        (hole,) = find_holes(script)
        out = fill_hole(script, hole, "G", comps, quiet_cfg())
        assert out.kind == "verified"
        assert verify_full(backend, out.script).success

    def test_apply_only_wrapped_in_subproof(self):
        space = SyntheticSpace(
            root="n0",
            nodes={
                "n0": SpaceNode(1, goal="G"),
                "p0": SpaceNode(1, goal="G"),
                "q0": SpaceNode(2, goal="inner"),
                "q1": SpaceNode(1, goal="pushed"),
            },
            edges={
                ("n0", "proof -"): "p0",
                ("p0", 'show "G"'): "q0",
                ("q0", "apply push"): "q1",
            },
        )
        backend = MockBackend(space)
        comps = Components(backend=backend, proposer=OracleProposer(space))
        script = parse_script(GAPPED_ISAR)
        (hole,) = find_holes(script)
        out = fill_hole(script, hole, "G", comps, quiet_cfg())
        assert out.kind == "partial"
        assert len(out.opened) >= 1
        assert any("proof -" in ln for ln in out.script.lines[3:])
        assert "apply push" in (ln.strip() for ln in out.script.lines)

    def test_nothing_found_is_no_change(self, isar_backend):
        comps = Components(backend=isar_backend, proposer=ScriptedProposer({}))
        script = parse_script(GAPPED_ISAR)
        (hole,) = find_holes(script)
        out = fill_hole(script, hole, "G", comps, quiet_cfg())
        assert out.kind == "no_change" and out.script == script

    def test_apply_legal_inserts_with_new_hole(self):
        space = SyntheticSpace(
            root="n0",
            nodes={"n0": SpaceNode(2, goal="G"), "n1": SpaceNode(1, goal="g1")},
            edges={("n0", "apply s0"): "n1"},
        )
        backend = MockBackend(space)
        comps = Components(backend=backend, proposer=OracleProposer(space))
        script = parse_script('lemma "G"\nsorry')
        (hole,) = find_holes(script)
        out = fill_hole(script, hole, "G", comps, quiet_cfg())
        assert out.kind == "partial"
        assert "apply s0" in out.script.lines
        assert len(find_holes(out.script)) == 1


def repair_fixture_space() -> SyntheticSpace:
    return SyntheticSpace(
        root="n0",
        nodes={
            "n0": SpaceNode(1, goal="G"),
            "p0": SpaceNode(1, goal="G"),
            "q0": SpaceNode(1, goal="G"),
            "t0": SpaceNode(0),
            "z0": SpaceNode(0),
        },
        edges={
            ("n0", "proof -"): "p0",
            ("p0", 'show "G"'): "q0",
            ("q0", "qed"): "z0",
            ("p0", 'show "G" by easy'): "t0",
            ("t0", "qed"): "z0",
        },
    )


class TestCegisRepair:
    def test_second_candidate_verifies_two_calls(self):
        space = repair_fixture_space()
        backend = MockBackend(space)
        proposer = ScriptedProposer(
            {"repair:*": [['show "G" by wrong'], ['show "G" by easy']]}
        )
        script = parse_script(GAPPED_ISAR)
        (hole,) = find_holes(script)
        stats = RunStats()
        state = PlannerState()
        out = cegis_repair(
            script, hole, state, quiet_cfg(repair_max_proposals=4), proposer, backend,
            goal="G", stats=stats,
        )
        assert out.kind == "verified"
        assert stats.verifier_calls == 2
        assert verify_full(backend, out.script).success

    def test_banned_block_skipped_without_verifier_call(self):
        space = repair_fixture_space()
        backend = MockBackend(space)
        proposer = ScriptedProposer(
            {
                "repair:*": [
                    ['show "G" by wrong'],
                    ['show "G" by wrong'],  # repeat: banned, must not be checked
                    ['show "G" by easy'],
                ]
            }
        )
        script = parse_script(GAPPED_ISAR)
        (hole,) = find_holes(script)
        stats = RunStats()
        out = cegis_repair(
            script, hole, PlannerState(), quiet_cfg(repair_max_proposals=5),
            proposer, backend, goal="G", stats=stats,
        )
        assert out.kind == "verified"
        assert stats.verifier_calls == 2  # wrong, easy; the repeat was skipped

    def test_budget_exhaustion_partial_tag(self):
        space = repair_fixture_space()
        backend = MockBackend(space)
        proposer = ScriptedProposer({"repair:*": [['show "G" by wrong']]})
        script = parse_script(GAPPED_ISAR)
        (hole,) = find_holes(script)
        out = cegis_repair(
            script, hole, PlannerState(), quiet_cfg(repair_max_proposals=1),
            proposer, backend, goal="G",
        )
        assert out.kind == "partial"
        assert out.tag == "stage=1 partial-progress"

    def test_no_proposals_no_change(self):
        space = repair_fixture_space()
        backend = MockBackend(space)
        script = parse_script(GAPPED_ISAR)
        (hole,) = find_holes(script)
        out = cegis_repair(
            script, hole, PlannerState(), quiet_cfg(), ScriptedProposer({}), backend,
            goal="G",
        )
        assert out.kind == "no_change" and out.script == script

    def test_stage_two_targets_subproof(self):
        space = repair_fixture_space()
        backend = MockBackend(space)
        seen_kinds = []
        proposer = ScriptedProposer(
            {"repair:*": [["proof -", '  show "G" by easy', "qed"]]}
        )
        script = parse_script(GAPPED_ISAR)
        (hole,) = find_holes(script)
        state = PlannerState()
        state.stage[hole.hid] = 2
        out = cegis_repair(
            script, hole, state, quiet_cfg(), proposer, backend, goal="G",
        )
        assert out.kind == "verified"
        assert out.script.lines[1] == "proof -"


class TestEscalate:
    def test_stage_one_cap(self):
        state = PlannerState()
        state.stage["h"] = 1
        state.tries[("h", 1)] = 2
        escalate(state, "h", c1=2, c2=3)
        assert state.stage["h"] == 2 and not state.regen_trigger

    def test_below_cap_unchanged(self):
        state = PlannerState()
        state.stage["h"] = 1
        state.tries[("h", 1)] = 1
        escalate(state, "h", c1=2, c2=3)
        assert state.stage["h"] == 1

    def test_stage_two_cap_sets_trigger(self):
        state = PlannerState()
        state.stage["h"] = 2
        state.tries[("h", 2)] = 3
        escalate(state, "h", c1=2, c2=3)
        assert state.stage["h"] == 2 and state.regen_trigger


class TestSelectFocus:
    def test_nearest(self):
        script = parse_script('lemma "g"\napply a\napply b\nsorry\napply c\napply d\napply e\napply f\napply g\nsorry')
        holes = find_holes(script)
        assert select_focus(script, 4) == holes[0].hid

    def test_tie_prefers_earlier(self):
        script = parse_script('lemma "g"\napply a\nsorry\napply b\napply c\napply d\nsorry')
        holes = find_holes(script)
        assert select_focus(script, 4) == holes[0].hid

    def test_no_holes(self):
        script = parse_script('lemma "g"\nby simp')
        assert select_focus(script, 1) is None


class TestPlanAuto:
    def test_end_to_end_fill(self, linear_space):
        backend = MockBackend(linear_space)
        comps = Components(
            backend=backend,
            proposer=OracleProposer(linear_space),
            outline_proposer=ScriptedProposer(
                {"outline:*": ['lemma "G"', "apply step_one", "  sorry"]}
            ),
            stats=RunStats(),
        )
        result = plan_auto("G", quiet_cfg(global_budget_s=30.0), comps)
        assert result.solved
        assert result.repairs_attempted == 0
        assert find_holes(result.script) == []
        assert verify_full(backend, result.script).success

    def test_tiny_budget_returns_best_outline(self, linear_space):
        backend = MockBackend(linear_space)
        comps = Components(
            backend=backend,
            proposer=ScriptedProposer({}),
            outline_proposer=ScriptedProposer(
                {"outline:*": ['lemma "G"', "apply step_one", "  sorry"]}
            ),
        )
        result = plan_auto("G", quiet_cfg(global_budget_s=1e-9), comps)
        assert not result.solved
        assert result.script.lines == ('lemma "G"', "apply step_one", "  sorry")

    def test_caps_escalate_then_regenerate(self, isar_space):
        backend = MockBackend(isar_space)
        stage1_variants = [
            ['show "G"', "  sorry"],
            ['  show "G"', "    sorry"],
        ]
        stage2_variants = [
            ["proof -", '  show "G"', "    sorry", "qed"],
            ["  proof -", '    show "G"', "      sorry", "  qed"],
            ["    proof -", '      show "G"', "        sorry", "    qed"],
        ]
        fixture = {
            "outline:*": ['lemma "G"', "proof -", '  show "G"', "    sorry", "qed"],
            "repair:*": stage1_variants + stage2_variants,
        }
        comps = Components(
            backend=backend,
            proposer=ScriptedProposer({}),  # fills never find anything
            outline_proposer=ScriptedProposer(fixture),
            stats=RunStats(),
        )
        cfg = quiet_cfg(repair_max_proposals=1, regen_cap=0, global_budget_s=30.0)
        result = plan_auto("G", cfg, comps)
        assert not result.solved
        assert result.repairs_attempted == 5  # 2 at stage 1, 3 at stage 2

    def test_iteration_hook_scripts_parse(self, isar_space):
        backend = MockBackend(isar_space)
        fixture = {
            "outline:*": ['lemma "G"', "proof -", '  show "G"', "    sorry", "qed"],
            "repair:*": [['show "G"', "  sorry"]],
        }
        seen = []
        comps = Components(
            backend=backend,
            proposer=ScriptedProposer({}),
            outline_proposer=ScriptedProposer(fixture),
        )
        cfg = quiet_cfg(repair_max_proposals=1, regen_cap=0, global_budget_s=10.0)
        plan_auto("G", cfg, comps, on_iteration=lambda s: seen.append(s))
        assert seen
        for script in seen:
            assert parse_script(script.text) == script

    def test_run_record_logged(self, tmp_path, linear_space):
        backend = MockBackend(linear_space)
        with LogSink(tmp_path) as sink:
            comps = Components(
                backend=backend,
                proposer=OracleProposer(linear_space),
                outline_proposer=ScriptedProposer(
                    {"outline:*": ['lemma "G"', "apply step_one", "  sorry"]}
                ),
                logger=RunLogger(sink, "plan-run", "G"),
                stats=RunStats(),
            )
            result = plan_auto("G", quiet_cfg(), comps)
        assert result.solved
        from proofsearch.datalog import read_runs

        runs = read_runs(tmp_path / "runs.jsonl")
        assert len(runs) == 1 and runs[0].success
        attempts = read_attempts(tmp_path / "attempts.jsonl")
        assert len(attempts) == comps.stats.verifier_calls
