"""Evaluation harness: answer-priority resolution and task-specific metrics.

Single-value tasks report normalized accuracy; size detection reports row and
column accuracy separately; merged-cell detection and row/column extraction
use cell-level F1 (the latter split by axis).
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .codec import parse_annotation
from .curate import compare_answers, normalize_answer
from .errors import (
    AnnotationParseError,
    MissingGtError,
    SchemaViolationError,
    UnanswerableError,
)
from .grid import TableGrid
from .prompts import Task
from .sandbox import SandboxPolicy, execute


@dataclass(frozen=True)
class Prediction:
    sample_id: str
    raw_response: str
    resolved_answer: str
    exec_used: bool


@dataclass
class MetricReport:
    task: str
    metric: str  # accuracy | row_col_accuracy | cell_f1 | row_col_f1
    values: dict[str, float | None]
    n: int
    notes: list[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Answer-priority rule
# ---------------------------------------------------------------------------

def _extract_tag(raw: str, tag: str) -> str | None:
    opener, closer = f"<{tag}>", f"</{tag}>"
    start = raw.find(opener)
    if start == -1:
        return None
    end = raw.find(closer, start + len(opener))
    if end == -1:
        return None
    return raw[start + len(opener):end].strip()


def resolve_answer(
    sample_id: str,
    raw_response: str,
    grid: TableGrid | None = None,
    policy: SandboxPolicy | None = None,
    table_source: str = "",
    exec_enabled: bool = True,
    harness_cmd: list[str] | None = None,
) -> Prediction:
    """Prefer executed code output; fall back to the <answer> tag.

    With execution disabled (or no grid available) this degrades exactly to
    answer-tag extraction.
    """
    code = _extract_tag(raw_response, "code")
    answer = _extract_tag(raw_response, "answer")
    if code is not None and exec_enabled and grid is not None:
        try:
            parsed = parse_annotation(raw_response)
            code = parsed.code  # fence-stripped form
        except AnnotationParseError:
            pass
        result = execute(
            code, grid, policy or SandboxPolicy(), table_source, harness_cmd=harness_cmd
        )
        if result.status == "ok":
            return Prediction(sample_id, raw_response, result.stdout.strip(), True)
    if answer:
        return Prediction(sample_id, raw_response, answer, False)
    raise UnanswerableError(f"sample {sample_id}: no code output and no answer tag")


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def _check_ids(preds: dict[str, str], gts: dict[str, str]) -> None:
    missing = [pid for pid in preds if pid not in gts]
    if missing:
        raise MissingGtError(missing)


def accuracy(
    preds: dict[str, str],
    gts: dict[str, str],
    separator: str = "|",
    task: str = "",
) -> MetricReport:
    """Fraction of id-aligned pairs that compare equal after normalization."""
    _check_ids(preds, gts)
    hits = sum(1 for pid, p in preds.items() if compare_answers(p, gts[pid], separator))
    n = len(preds)
    return MetricReport(task, "accuracy", {"accuracy": hits / n if n else 0.0}, n)


_INT_RE = re.compile(r"[-+]?\d+")


def parse_row_col(text: str) -> tuple[int, int] | None:
    """First two integers in the text, read as (rows, cols)."""
    nums = _INT_RE.findall(text)
    if len(nums) < 2:
        return None
    return int(nums[0]), int(nums[1])


def tsd_accuracy(
    preds: dict[str, str],
    gts: dict[str, tuple[int, int] | str],
    task: str = "tsd",
) -> MetricReport:
    """Row and column count accuracy, scored per axis.

    Unparsable predictions count as incorrect on both axes and are listed in
    the report notes.
    """
    _check_ids(preds, {k: "" for k in gts})
    row_hits = col_hits = 0
    notes = []
    for pid, pred in preds.items():
        gt = gts[pid]
        gt_rc = parse_row_col(gt) if isinstance(gt, str) else tuple(gt)
        if gt_rc is None:
            raise SchemaViolationError(f"ground truth for {pid} has no row/col pair")
        pred_rc = parse_row_col(pred)
        if pred_rc is None:
            notes.append(f"unparsable prediction for {pid}")
            continue
        if pred_rc[0] == gt_rc[0]:
            row_hits += 1
        if pred_rc[1] == gt_rc[1]:
            col_hits += 1
    n = len(preds)
    values = {
        "row_acc": row_hits / n if n else 0.0,
        "col_acc": col_hits / n if n else 0.0,
    }
    return MetricReport(task, "row_col_accuracy", values, n, notes)


def cell_f1(pred_cells: list[str], gt_cells: list[str]) -> float:
    """Cell-level F1 over normalized multisets (min-multiplicity intersection).

    Both sides empty is perfect agreement (1.0); one side empty is 0.0.
    """
    pred_counter = Counter(normalize_answer(c) for c in pred_cells)
    gt_counter = Counter(normalize_answer(c) for c in gt_cells)
    if not pred_counter and not gt_counter:
        return 1.0
    overlap = sum((pred_counter & gt_counter).values())
    p = overlap / sum(pred_counter.values()) if pred_counter else 0.0
    r = overlap / sum(gt_counter.values()) if gt_counter else 0.0
    if p + r == 0:
        return 0.0
    return 2 * p * r / (p + r)


def split_cells(text: str, separator: str = "|") -> list[str]:
    if not text.strip():
        return []
    return [c.strip() for c in text.split(separator)]


def mcd_f1(
    preds: dict[str, str],
    gts: dict[str, str],
    separator: str = "|",
    task: str = "mcd",
) -> MetricReport:
    """Mean cell-level F1 over all samples."""
    _check_ids(preds, gts)
    scores = [
        cell_f1(split_cells(p, separator), split_cells(gts[pid], separator))
        for pid, p in preds.items()
    ]
    n = len(scores)
    mean_f1 = sum(scores) / n if n else 0.0
    return MetricReport(task, "cell_f1", {"f1": mean_f1}, n)


def rce_f1(
    preds: dict[str, str],
    gts: dict[str, tuple[str, str]],
    separator: str = "|",
    task: str = "rce",
) -> MetricReport:
    """Mean cell F1 per axis; gts map id -> (axis, cells) with axis row|col.

    An axis with no queries is reported as absent (None), not zero.
    """
    _check_ids(preds, {k: "" for k in gts})
    axis_scores: dict[str, list[float]] = {"row": [], "col": []}
    for pid, pred in preds.items():
        axis, gt_cells = gts[pid]
        if axis not in axis_scores:
            raise SchemaViolationError(f"unknown axis {axis!r} for {pid}")
        axis_scores[axis].append(
            cell_f1(split_cells(pred, separator), split_cells(gt_cells, separator))
        )
    values: dict[str, float | None] = {}
    for axis, scores in axis_scores.items():
        values[f"{axis}_f1"] = sum(scores) / len(scores) if scores else None
    return MetricReport(task, "row_col_f1", values, len(preds))


# ---------------------------------------------------------------------------
# File-level harness
# ---------------------------------------------------------------------------

def read_predictions(path: str | Path) -> dict[str, str]:
    """Prediction file: JSONL of {sample_id, raw_response} or {sample_id, answer}."""
    preds: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaViolationError(f"invalid JSON: {exc}", line_no) from exc
            if "sample_id" not in obj:
                raise SchemaViolationError("missing field 'sample_id'", line_no, "sample_id")
            if "answer" in obj:
                preds[obj["sample_id"]] = obj["answer"]
            elif "raw_response" in obj:
                raw = obj["raw_response"]
                answer = _extract_tag(raw, "answer")
                preds[obj["sample_id"]] = answer if answer is not None else raw
            else:
                raise SchemaViolationError(
                    "need 'answer' or 'raw_response'", line_no, "raw_response"
                )
    return preds


def read_ground_truth(path: str | Path) -> dict[str, dict]:
    """Ground-truth file: JSONL of {sample_id, gt_answer, axis?}."""
    gts: dict[str, dict] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaViolationError(f"invalid JSON: {exc}", line_no) from exc
            for fld in ("sample_id", "gt_answer"):
                if fld not in obj:
                    raise SchemaViolationError(f"missing field {fld!r}", line_no, fld)
            gts[obj["sample_id"]] = obj
    return gts


def evaluate_file(
    pred_path: str | Path,
    gt_path: str | Path,
    task: Task,
    separator: str = "|",
) -> MetricReport:
    """Dispatch a prediction/GT file pair to the task's metric."""
    preds = read_predictions(pred_path)
    gts = read_ground_truth(gt_path)
    if task is Task.TSD:
        return tsd_accuracy(preds, {k: v["gt_answer"] for k, v in gts.items()})
    if task is Task.MCD:
        return mcd_f1(preds, {k: v["gt_answer"] for k, v in gts.items()}, separator)
    if task is Task.RCE:
        gt_pairs = {}
        for k, v in gts.items():
            if "axis" not in v:
                raise SchemaViolationError(f"RCE ground truth for {k} needs 'axis'")
            gt_pairs[k] = (v["axis"], v["gt_answer"])
        return rce_f1(preds, gt_pairs, separator)
    return accuracy(
        preds, {k: v["gt_answer"] for k, v in gts.items()}, separator, task.value
    )


def render_report(report: MetricReport) -> str:
    parts = [f"task={report.task or '-'}", f"metric={report.metric}", f"n={report.n}"]
    for name, value in report.values.items():
        parts.append(f"{name}={'absent' if value is None else f'{value:.4f}'}")
    lines = ["  ".join(parts)]
    lines.extend(f"  note: {n}" for n in report.notes)
    return "\n".join(lines)
