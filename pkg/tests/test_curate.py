import json
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from tabforge.codec import Annotation, TokenCounts
from tabforge.curate import (
    DATASET_SENTINEL,
    Sample,
    compare_answers,
    compute_stats,
    downsample,
    filter_lengths,
    normalize_answer,
    read_dataset,
    record_from_json,
    record_to_json,
    render_stats,
    reverify,
    verify,
    write_dataset,
)
from tabforge.errors import SchemaViolationError
from tabforge.prompts import TableFormat, Task
from tabforge.sandbox import ExecResult


def make_sample(sid="s1", task=Task.WTQ, gt="4"):
    return Sample(
        id=sid,
        task=task,
        table_source="<table><tr><td>4</td></tr></table>",
        table_format=TableFormat.HTML,
        question="q",
        gt_answer=gt,
    )


def make_annotation(reason_tokens=3, code_tokens=3, total=None):
    return Annotation(
        reason="some reasoning here",
        code="print(4)",
        answer="4",
        raw="<reason>some reasoning here</reason><code>print(4)</code><answer>4</answer>",
        token_counts=TokenCounts(
            reason_tokens, code_tokens, 1,
            total if total is not None else reason_tokens + code_tokens + 1,
        ),
    )


def ok_exec(stdout="4\n"):
    return ExecResult("ok", stdout, "", 0.01)


class TestNormalizeAnswer:
    def test_trailing_period_and_case(self):
        assert normalize_answer("  Confirmed.", "confirmed") == "confirmed"

    def test_rounds_to_gt_precision(self):
        assert normalize_answer("12.3456", "12.35") == "12.35"

    def test_strips_currency_and_separators(self):
        assert normalize_answer("$1,234", "1234") == "1234"

    def test_strips_percent(self):
        assert normalize_answer("45%", "45") == "45"

    def test_strips_wrapping_quotes(self):
        assert normalize_answer('"Paris"', "paris") == "paris"

    def test_collapses_whitespace(self):
        assert normalize_answer("new   york \t city", "new york city") == "new york city"

    def test_integer_hint_rounds_to_integer(self):
        assert normalize_answer("7.0", "7") == "7"

    def test_non_numeric_left_alone(self):
        assert normalize_answer("alpha-beta", "x") == "alpha-beta"

    @given(st.text(max_size=40), st.text(max_size=20))
    def test_idempotent(self, raw, hint):
        once = normalize_answer(raw, hint)
        assert normalize_answer(once, hint) == once


class TestCompareAnswers:
    def test_multiset_order_free(self):
        assert compare_answers("b | a", "a | b")

    def test_plain_equal(self):
        assert compare_answers("42", "42")

    def test_plain_unequal(self):
        assert not compare_answers("yes", "no")

    def test_cardinality_mismatch(self):
        assert not compare_answers("a | b | b", "a | b")

    def test_numeric_elements_normalized(self):
        assert compare_answers("$5 | 3.00", "3 | 5")

    def test_custom_separator(self):
        assert compare_answers("a;b", "b;a", separator=";")

    @given(st.text(alphabet="abc 123.", max_size=20), st.text(alphabet="abc 123.", max_size=20))
    def test_symmetric_without_separator(self, a, b):
        assert compare_answers(a, b) == compare_answers(b, a)


class TestVerify:
    def test_accepted(self):
        rec = verify(make_sample(), make_annotation(), ok_exec("4\n"))
        assert rec.verdict == "accepted"
        assert rec.normalized_pred == rec.normalized_gt == "4"

    def test_rejected_mismatch(self):
        rec = verify(make_sample(gt="5"), make_annotation(), ok_exec("4\n"))
        assert rec.verdict == "rejected_mismatch"

    def test_rejected_exec_on_timeout(self):
        rec = verify(make_sample(), make_annotation(), ExecResult("timeout", "", "", 10.0))
        assert rec.verdict == "rejected_exec"

    def test_rejected_exec_on_runtime_error(self):
        rec = verify(make_sample(), make_annotation(), ExecResult("runtime_error", "", "tb", 0.1))
        assert rec.verdict == "rejected_exec"

    def test_rejected_format(self):
        rec = verify(make_sample(), None, None)
        assert rec.verdict == "rejected_format"

    def test_acceptance_soundness(self):
        cases = [
            (make_sample(), make_annotation(), ok_exec("4\n")),
            (make_sample(gt="9"), make_annotation(), ok_exec("4\n")),
            (make_sample(), make_annotation(), ExecResult("empty_output", "", "", 0.0)),
            (make_sample(), None, None),
        ]
        for sample, ann, ex in cases:
            rec = verify(sample, ann, ex)
            if rec.verdict == "accepted":
                assert ex.status == "ok"
                assert compare_answers(ex.stdout.strip(), sample.gt_answer)


class TestFilterLengths:
    def test_boundary_kept_at_limit(self):
        rec = verify(make_sample(), make_annotation(reason_tokens=1024, code_tokens=1024), ok_exec())
        assert filter_lengths([rec]) == [rec]

    def test_reason_over_limit_dropped(self):
        rec = verify(make_sample(), make_annotation(reason_tokens=1025), ok_exec())
        assert filter_lengths([rec]) == []

    def test_code_over_limit_dropped(self):
        rec = verify(make_sample(), make_annotation(code_tokens=1025), ok_exec())
        assert filter_lengths([rec]) == []

    def test_tsu_keeps_shortest(self):
        records = [
            verify(
                make_sample(sid=f"tsu-{i:04d}", task=Task.TSD),
                make_annotation(total=6000 - i),
                ok_exec(),
            )
            for i in range(6000)
        ]
        kept = filter_lengths(records, tsu_keep=5000)
        assert len(kept) == 5000
        totals = sorted(r.annotation.token_counts.total for r in kept)
        assert totals == list(range(1, 5001))  # exactly the 5000 shortest

    def test_tsu_sortedness(self):
        records = [
            verify(make_sample(sid=f"t{i}", task=Task.TSD), make_annotation(total=t), ok_exec())
            for i, t in enumerate([50, 10, 30, 20, 40])
        ]
        kept = filter_lengths(records, tsu_keep=3)
        assert [r.annotation.token_counts.total for r in kept] == [10, 20, 30]

    def test_tsu_tie_broken_by_id(self):
        records = [
            verify(make_sample(sid=sid, task=Task.TSD), make_annotation(total=7), ok_exec())
            for sid in ("b", "a", "c")
        ]
        kept = filter_lengths(records, tsu_keep=2)
        assert [r.sample.id for r in kept] == ["a", "b"]

    def test_never_increases(self):
        records = [verify(make_sample(sid=str(i)), make_annotation(), ok_exec()) for i in range(5)]
        assert len(filter_lengths(records)) <= len(records)

    def test_unparsed_records_pass_through(self):
        rec = verify(make_sample(), None, None)
        assert filter_lengths([rec]) == [rec]


class TestDownsample:
    def _records(self, n, task=Task.WTQ):
        return [
            verify(make_sample(sid=f"{task.value}-{i:03d}", task=task), make_annotation(), ok_exec())
            for i in range(n)
        ]

    def test_deterministic(self):
        records = self._records(20)
        a = downsample(records, {Task.WTQ: 5}, seed=7)
        b = downsample(records, {Task.WTQ: 5}, seed=7)
        assert [r.sample.id for r in a] == [r.sample.id for r in b]
        assert len(a) == 5

    def test_seed_changes_selection(self):
        records = self._records(40)
        a = downsample(records, {Task.WTQ: 10}, seed=1)
        b = downsample(records, {Task.WTQ: 10}, seed=2)
        assert {r.sample.id for r in a} != {r.sample.id for r in b}

    def test_target_zero_removes_task(self):
        records = self._records(3) + self._records(3, Task.TSD)
        out = downsample(records, {Task.TSD: 0})
        assert {r.sample.task for r in out} == {Task.WTQ}

    def test_target_above_size_keeps_all(self):
        records = self._records(3)
        assert len(downsample(records, {Task.WTQ: 99})) == 3

    def test_untargeted_tasks_untouched(self):
        records = self._records(4) + self._records(6, Task.TABFACT)
        out = downsample(records, {Task.WTQ: 2})
        assert sum(r.sample.task is Task.TABFACT for r in out) == 6

    def test_order_independent_of_input_order(self):
        records = self._records(12)
        shuffled = records[::-1]
        a = downsample(records, {Task.WTQ: 4}, seed=3)
        b = downsample(shuffled, {Task.WTQ: 4}, seed=3)
        assert [r.sample.id for r in a] == [r.sample.id for r in b]


class TestStats:
    def four_case(self):
        return [
            verify(make_sample(sid="a"), make_annotation(), ok_exec("4\n")),
            verify(make_sample(sid="b", gt="9"), make_annotation(), ok_exec("4\n")),
            verify(make_sample(sid="c"), make_annotation(), ExecResult("timeout", "", "", 1.0)),
            verify(make_sample(sid="d"), None, None),
        ]

    def test_histogram_and_rejection_rate(self):
        stats = compute_stats(self.four_case())
        counts = stats.verdict_counts["wtq"]
        assert counts["accepted"] == 1
        assert counts["rejected_mismatch"] == 1
        assert counts["rejected_exec"] == 1
        assert counts["rejected_format"] == 1
        assert stats.rejection_rate["wtq"] == pytest.approx(0.75)

    def test_order_invariant(self):
        records = self.four_case()
        shuffled = list(records)
        random.Random(0).shuffle(shuffled)
        assert compute_stats(records).rejection_rate == compute_stats(shuffled).rejection_rate

    def test_render(self):
        text = render_stats(compute_stats(self.four_case()))
        assert "wtq" in text
        assert "0.750" in text

    def test_empty(self):
        stats = compute_stats([])
        assert stats.n_records == 0
        assert stats.rejection_rate == {}


class TestPersistence:
    def test_round_trip_and_sentinel(self, tmp_path):
        records = [
            verify(make_sample(sid="a"), make_annotation(), ok_exec("4\n")),
            verify(make_sample(sid="b", gt="9"), make_annotation(), ok_exec("4\n")),
            verify(make_sample(sid="c"), None, None),
        ]
        path = tmp_path / "data.jsonl"
        write_dataset(records, path)
        first_line = path.read_text().splitlines()[0]
        assert first_line == DATASET_SENTINEL
        loaded = read_dataset(path)
        assert [r.verdict for r in loaded] == [r.verdict for r in records]
        assert [r.sample for r in loaded] == [r.sample for r in records]

    def test_reverify_reproduces_verdicts(self, tmp_path):
        records = [
            verify(make_sample(sid="a"), make_annotation(), ok_exec("4\n")),
            verify(make_sample(sid="b", gt="9"), make_annotation(), ok_exec("4\n")),
            verify(make_sample(sid="c"), make_annotation(), ExecResult("timeout", "", "", 1.0)),
            verify(make_sample(sid="d"), None, None),
        ]
        path = tmp_path / "data.jsonl"
        write_dataset(records, path)
        loaded = read_dataset(path)
        again = reverify(loaded)
        assert [r.verdict for r in again] == [r.verdict for r in records]

    def test_missing_field_names_line_and_field(self, tmp_path):
        rec = verify(make_sample(), make_annotation(), ok_exec())
        obj = record_to_json(rec)
        del obj["gt_answer"]
        path = tmp_path / "bad.jsonl"
        path.write_text(DATASET_SENTINEL + "\n" + json.dumps(obj) + "\n")
        with pytest.raises(SchemaViolationError) as exc_info:
            read_dataset(path)
        assert exc_info.value.field == "gt_answer"
        assert exc_info.value.line_no == 2

    def test_invalid_json_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(DATASET_SENTINEL + "\n{nope\n")
        with pytest.raises(SchemaViolationError):
            read_dataset(path)

    def test_record_json_has_required_fields(self):
        obj = record_to_json(verify(make_sample(), make_annotation(), ok_exec()))
        for fld in (
            "id", "task", "category", "table_format", "table_source", "question",
            "gt_answer", "reason", "code", "answer", "exec_stdout", "verdict", "token_counts",
        ):
            assert fld in obj

    def test_from_json_rejects_unknown_task(self):
        obj = record_to_json(verify(make_sample(), make_annotation(), ok_exec()))
        obj["task"] = "mystery"
        with pytest.raises(ValueError):
            record_from_json(obj)
