"""Script-model tests: parsing, holes, fingerprints, blocks, normalization."""

from __future__ import annotations

import re

import pytest
from hypothesis import given
from hypothesis import strategies as st

from proofsearch.errors import (
    EmptyAfterStrip,
    HeaderOverlap,
    NoGoalHeader,
    Unsalvageable,
)
from proofsearch.script import (
    BlockSpan,
    ProofScript,
    enclosing_block,
    find_holes,
    hole_id,
    is_apply_legal,
    normalize_outline,
    open_minimal_sorries,
    parse_script,
    replace_span,
    state_fingerprint,
    strip_to_type,
)

ISAR_SAMPLE = """lemma "P ∧ Q ⟶ Q ∧ P"
proof -
  show "P ∧ Q ⟶ Q ∧ P"
    sorry
qed"""


class TestParseScript:
    def test_simple_lemma(self):
        script = parse_script('lemma "a = a"\n  sorry')
        assert script.goal == "a = a"
        assert len(script.lines) == 2

    def test_theorem_header_unicode_goal(self):
        script = parse_script('theorem "P ∧ Q ⟶ Q ∧ P"\nproof -\n  sorry\nqed')
        assert script.goal == "P ∧ Q ⟶ Q ∧ P"
        assert len(script.lines) == 4

    def test_no_header_raises(self):
        with pytest.raises(NoGoalHeader):
            parse_script("apply simp")

    def test_empty_raises(self):
        with pytest.raises(NoGoalHeader):
            parse_script("   \n  ")

    def test_round_trip(self):
        for text in (ISAR_SAMPLE, 'lemma "x"\n\n  sorry\n', 'lemma "g"'):
            script = parse_script(text)
            assert parse_script(script.text) == script

    @given(
        st.lists(
            st.text(alphabet=" abcdefgh()∧", min_size=0, max_size=20), max_size=6
        )
    )
    def test_round_trip_property(self, body):
        text = "\n".join(['lemma "goal stmt"'] + body)
        script = parse_script(text)
        assert parse_script(script.text) == script
        assert script.text == text


def _scan_oracle(text: str) -> int:
    """Independent hole count: strip comments/strings, then count tokens."""
    while True:
        stripped = re.sub(r"\(\*[^(*]*?\*\)", "", text, flags=re.S)
        if stripped == text:
            break
        text = stripped
    parts = text.split('"')
    outside = "".join(parts[::2])
    return len(re.findall(r"(?<![\w'])sorry(?![\w'])", outside))


class TestFindHoles:
    def test_two_holes_ordered(self):
        script = parse_script('lemma "g"\nproof -\n  sorry\n  show "x"\n    sorry\nqed')
        holes = find_holes(script)
        assert [h.start_line for h in holes] == [2, 4]
        assert all(h.end_line == h.start_line + 1 for h in holes)

    def test_no_sorry(self):
        assert find_holes(parse_script('lemma "g"\nby simp')) == []

    def test_comment_excluded(self):
        script = parse_script('lemma "g"\n(* sorry *)\nby simp')
        assert find_holes(script) == []

    def test_nested_comment_excluded(self):
        script = parse_script('lemma "g"\n(* a (* sorry *) b *)\nby simp')
        assert find_holes(script) == []

    def test_string_excluded(self):
        script = parse_script('lemma "g"\nhave "sorry = sorry"\n  sorry\nqed')
        assert len(find_holes(script)) == 1

    def test_word_boundary(self):
        script = parse_script('lemma "g"\napply sorryish\nsorry')
        holes = find_holes(script)
        assert len(holes) == 1 and holes[0].start_line == 2

    @given(
        st.lists(
            st.sampled_from(
                ["  sorry", "apply simp", '(* sorry *)', 'have "sorry"', "qed", "", "sorry sorry"]
            ),
            max_size=8,
        )
    )
    def test_count_matches_scan_oracle(self, body):
        script = parse_script("\n".join(['lemma "g"'] + body))
        assert len(find_holes(script)) == _scan_oracle(script.text)


class TestHoleId:
    def test_deterministic(self):
        s1 = parse_script(ISAR_SAMPLE)
        s2 = parse_script(ISAR_SAMPLE)
        (h1,), (h2,) = find_holes(s1), find_holes(s2)
        assert hole_id(s1, h1) == hole_id(s2, h2)

    def test_window_locality(self):
        pad = "x" * 150
        base = f'lemma "A{pad}"\n  sorry'
        edited = f'lemma "B{pad}"\n  sorry'
        s1, s2 = parse_script(base), parse_script(edited)
        (h1,), (h2,) = find_holes(s1), find_holes(s2)
        # The edit is > 120 chars before the span, so identity is unchanged.
        assert hole_id(s1, h1, 120) == hole_id(s2, h2, 120)
        # A nearby edit does change it.
        s3 = parse_script(f'lemma "A{pad}"\n  sorry\nqed')
        (h3,) = find_holes(s3)
        assert hole_id(s1, h1, 120) != hole_id(s3, h3, 120)

    def test_golden_window_digest(self):
        # SHA1("  sorry\nqed")[:16], computed once with hashlib and frozen.
        script = ProofScript(("  sorry", "qed"), "")
        (hole,) = find_holes(script)
        assert hole_id(script, hole, 120) == "19a854602eaf81d9"
        assert hole.hid == "19a854602eaf81d9"


class TestStateFingerprint:
    def test_whitespace_collapse(self):
        assert state_fingerprint("goal:\n 1.  P x") == state_fingerprint("goal:\n 1. P x")

    def test_blank_variants_equal(self):
        assert state_fingerprint("") == state_fingerprint(" \n\t\n  ")

    def test_golden_no_subgoals(self):
        # SHA1("No subgoals!"), computed once with hashlib and frozen.
        assert state_fingerprint("No subgoals!") == "d82adf72feef1ee65af515fa51701267bf30ee1b"

    def test_trailing_and_blank_lines_ignored(self):
        assert state_fingerprint("a b\t\n\n c ") == state_fingerprint("a b\n c")

    def test_normalization_idempotent(self):
        from proofsearch.script import normalize_state_text

        text = "goal:  \n\n 1.\tP  x\n"
        assert normalize_state_text(normalize_state_text(text)) == normalize_state_text(text)


class TestReplaceSpan:
    def test_single_line_replacement_keeps_indent(self):
        script = parse_script('lemma "g"\n    sorry')
        out = replace_span(script, (1, 2), "by simp")
        assert out.lines == ('lemma "g"', "    by simp")

    def test_empty_replacement_deletes(self):
        script = parse_script('lemma "g"\napply simp\nsorry')
        out = replace_span(script, (1, 2), "")
        assert out.lines == ('lemma "g"', "sorry")

    def test_header_overlap(self):
        script = parse_script('lemma "g"\nsorry')
        with pytest.raises(HeaderOverlap):
            replace_span(script, (0, 1), "by simp")

    def test_block_relative_indent_preserved(self):
        script = parse_script('lemma "g"\n  sorry')
        out = replace_span(script, (1, 2), "proof -\n  show ?thesis by simp\nqed")
        assert out.lines[1:] == ("  proof -", "    show ?thesis by simp", "  qed")

    def test_out_of_bounds(self):
        script = parse_script('lemma "g"\nsorry')
        with pytest.raises(ValueError):
            replace_span(script, (1, 3), "x")

    def test_lines_outside_span_verbatim(self):
        script = parse_script('lemma "g"\napply a\napply b\napply c')
        out = replace_span(script, (2, 3), "sorry")
        assert out.lines[0] == script.lines[0]
        assert out.lines[1] == script.lines[1]
        assert out.lines[3] == script.lines[3]


NESTED = """lemma "g"
proof -
  have "a"
  proof -
    show "a"
      sorry
  qed
  show "g"
    by simp
qed"""


class TestEnclosingBlock:
    def test_subproof_simple(self):
        script = parse_script(ISAR_SAMPLE)
        span = enclosing_block(script, 3, "subproof")
        assert span == BlockSpan("subproof", 1, 5)

    def test_top_level_no_case(self):
        script = parse_script('lemma "g"\napply simp\nsorry')
        assert enclosing_block(script, 1, "case_block") is None

    def test_nested_innermost(self):
        script = parse_script(NESTED)
        inner = enclosing_block(script, 5, "subproof")
        # Brute force: smallest candidate span containing the line.
        candidates = []
        stack = []
        for i, ln in enumerate(script.lines):
            if ln.lstrip().startswith("proof"):
                stack.append(i)
            elif ln.lstrip().startswith("qed") and stack:
                candidates.append((stack.pop(), i + 1))
        containing = [c for c in candidates if c[0] <= 5 < c[1]]
        expected = min(containing, key=lambda c: c[1] - c[0])
        assert (inner.start_line, inner.end_line) == expected

    def test_have_show_block(self):
        script = parse_script(NESTED)
        # Innermost head governing the sorry is the show, not the outer have.
        span = enclosing_block(script, 5, "have_show")
        assert span.kind == "have_show"
        assert (span.start_line, span.end_line) == (4, 6)
        # The inner proof line itself sits under the have micro-block.
        outer = enclosing_block(script, 3, "have_show")
        assert (outer.start_line, outer.end_line) == (2, 7)

    def test_have_inline_by_is_single_line(self):
        script = parse_script('lemma "g"\nproof -\n  have "a" by simp\n  show "g" by simp\nqed')
        span = enclosing_block(script, 2, "have_show")
        assert (span.start_line, span.end_line) == (2, 3)

    def test_case_block(self):
        text = 'lemma "g"\nproof (induction xs)\n  case Nil\n  then show ?case sorry\nnext\n  case (Cons x xs)\n  then show ?case sorry\nqed'
        script = parse_script(text)
        span = enclosing_block(script, 3, "case_block")
        assert (span.start_line, span.end_line) == (2, 4)
        span2 = enclosing_block(script, 6, "case_block")
        assert (span2.start_line, span2.end_line) == (5, 7)

    def test_whole(self):
        script = parse_script(ISAR_SAMPLE)
        span = enclosing_block(script, 0, "whole")
        assert (span.start_line, span.end_line) == (0, len(script.lines))

    def test_subproof_spans_properly_nested(self):
        script = parse_script(NESTED)
        spans = [
            enclosing_block(script, i, "subproof")
            for i in range(len(script.lines))
        ]
        spans = [(s.start_line, s.end_line) for s in spans if s is not None]
        for a in spans:
            for b in spans:
                disjoint = a[1] <= b[0] or b[1] <= a[0]
                contained = (a[0] <= b[0] and b[1] <= a[1]) or (b[0] <= a[0] and a[1] <= b[1])
                assert disjoint or contained


class TestOpenMinimalSorries:
    def test_failing_by_under_show_becomes_subproof(self):
        script = parse_script('lemma "g"\nproof -\n  show "P"\n    by auto\nqed')
        out, opened = open_minimal_sorries(script, [3])
        assert out.lines[2:] == ('  show "P"', "    proof -", "      sorry", "    qed", "qed")
        assert len(opened) == 1
        assert opened[0] in find_holes(out)

    def test_failing_top_level_apply_becomes_sorry(self):
        script = parse_script('lemma "g"\napply simp\napply auto')
        out, opened = open_minimal_sorries(script, [2])
        assert out.lines == ('lemma "g"', "apply simp", "sorry")
        assert len(opened) == 1

    def test_no_failing_lines(self):
        script = parse_script('lemma "g"\nby simp')
        out, opened = open_minimal_sorries(script, [])
        assert out == script and opened == []

    def test_output_reparses_and_holes_discoverable(self):
        script = parse_script('lemma "g"\nproof -\n  have "a"\n    apply x\n    apply y\nqed')
        out, opened = open_minimal_sorries(script, [3, 4])
        assert parse_script(out.text) == out
        hids = {h.hid for h in find_holes(out)}
        assert all(h.hid in hids for h in opened)

    def test_header_never_touched(self):
        script = parse_script('lemma "g"\nby simp')
        out, opened = open_minimal_sorries(script, [0])
        assert out == script and opened == []


class TestStripToType:
    def test_fenced_have(self):
        raw = "```isar\nhave \"x\" by simp\n```"
        assert strip_to_type(raw, "have_show") == 'have "x" by simp'

    def test_lemma_wrapper_dropped_for_subproof(self):
        raw = 'lemma "G"\nproof -\n  show ?thesis by simp\nqed'
        assert strip_to_type(raw, "subproof") == "proof -\n  show ?thesis by simp\nqed"

    def test_pure_prose_raises(self):
        with pytest.raises(EmptyAfterStrip):
            strip_to_type("I could not find a proof, sorry about that!", "have_show")

    def test_leading_and_trailing_prose_dropped(self):
        raw = "Here is the block:\ncase Nil\nthen show ?case sorry\nHope this helps!"
        assert strip_to_type(raw, "case_block") == "case Nil\nthen show ?case sorry"

    def test_whole_keeps_header(self):
        raw = "Sure!\n```\nlemma \"G\"\nby simp\n```"
        assert strip_to_type(raw, "whole") == 'lemma "G"\nby simp'


class TestNormalizeOutline:
    def test_header_forced_to_goal(self):
        out = normalize_outline('lemma "wrong"\nproof -\n  show "G"\n    sorry\nqed', "G")
        assert out.lines[0] == 'lemma "G"'
        assert out.goal == "G"

    def test_show_without_justification_gets_sorry(self):
        out = normalize_outline('lemma "G"\nproof -\n  show "G"\nqed', "G", enforce_holes=False)
        idx = out.lines.index('  show "G"')
        assert out.lines[idx + 1].strip() == "sorry"

    def test_enforce_holes_rewrites_by(self):
        out = normalize_outline('lemma "G"\nby simp', "G", enforce_holes=True)
        assert out.lines == ('lemma "G"', "sorry")

    def test_keeps_by_without_enforcement(self):
        out = normalize_outline('lemma "G"\nby simp', "G", enforce_holes=False)
        assert out.lines == ('lemma "G"', "by simp")

    def test_inline_by_split(self):
        out = normalize_outline('lemma "G"\nproof -\n  show "G" by simp\nqed', "G")
        assert '  show "G"' in out.lines
        assert "    sorry" in out.lines

    def test_unsalvageable(self):
        with pytest.raises(Unsalvageable):
            normalize_outline("I am not sure how to prove this.", "G")

    def test_unbalanced_proof_closed(self):
        out = normalize_outline('lemma "G"\nproof -\n  show "G"\n    sorry', "G")
        assert out.lines[-1] == "qed"

    def test_result_parses(self):
        out = normalize_outline("```\nproof -\n  show ?thesis sorry\nqed\n```", "G")
        assert parse_script(out.text) == out


class TestIsApplyLegal:
    def test_top_level_hole(self):
        script = parse_script('lemma "g"\napply simp\nsorry')
        (hole,) = find_holes(script)
        assert is_apply_legal(script, hole)

    def test_hole_under_show(self):
        script = parse_script(ISAR_SAMPLE)
        (hole,) = find_holes(script)
        assert not is_apply_legal(script, hole)

    def test_hole_in_nested_subproof(self):
        script = parse_script('lemma "g"\nproof -\n  sorry\nqed')
        (hole,) = find_holes(script)
        assert not is_apply_legal(script, hole)
