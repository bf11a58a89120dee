"""Post-processing loop: normalize and compare executed output against ground
truth, accept or reject, apply length filtering and down-sampling, compute
statistics, and persist the curated dataset."""

from __future__ import annotations

import json
import math
import random
import re
import statistics as stats_mod
from dataclasses import dataclass, field
from pathlib import Path

from .codec import Annotation, TokenCounts
from .errors import DatasetIOError, SchemaViolationError
from .prompts import Task, TableFormat, TaskCategory
from .sandbox import ExecResult

DATASET_SENTINEL = "# tabforge-dataset v1"

DEFAULT_TAG_TOKEN_LIMIT = 1024
DEFAULT_TSU_KEEP = 5000

VERDICTS = (
    "accepted",
    "rejected_mismatch",
    "rejected_exec",
    "rejected_format",
    "rejected_length",
)


@dataclass(frozen=True)
class Sample:
    id: str
    task: Task
    table_source: str
    table_format: TableFormat
    question: str
    gt_answer: str
    gt_list_separator: str = "|"


@dataclass(frozen=True)
class VerifiedRecord:
    sample: Sample
    annotation: Annotation | None
    exec: ExecResult | None
    verdict: str
    normalized_pred: str = ""
    normalized_gt: str = ""


# ---------------------------------------------------------------------------
# Answer normalization and comparison
# ---------------------------------------------------------------------------

_CURRENCY = "$€£¥₩"
_QUOTES = "\"'“”‘’«»"
_NUM_RE = re.compile(r"[-+]?\d[\d,]*(?:\.\d+)?")


def _strip_symbols(token: str) -> str:
    """Drop currency/percent symbols and thousands separators when the
    remainder parses as a number; otherwise return the token unchanged."""
    stripped = token.strip().lstrip(_CURRENCY).rstrip("%").lstrip(_CURRENCY)
    candidate = stripped.replace(",", "")
    try:
        float(candidate)
    except ValueError:
        return token
    return candidate


def _as_number(text: str) -> float | None:
    try:
        value = float(text)
    except ValueError:
        return None
    # "inf"/"nan" spellings are words, not numeric answers
    return value if math.isfinite(value) else None


def _decimal_places(text: str) -> int:
    if "." in text:
        return len(text.split(".", 1)[1])
    return 0


def normalize_answer(raw: str, gt_hint: str = "") -> str:
    """Canonicalize one answer string for comparison.

    Lowercase, trim, collapse internal whitespace, strip wrapping quotes and a
    terminal period, strip currency/percent/thousands decoration from numeric
    tokens, and when both sides are numeric round to the hint's decimal
    places. Idempotent: normalizing an already-normalized value is a no-op.
    """
    text = " ".join(raw.split()).lower()
    while len(text) >= 2 and text[0] in _QUOTES and text[-1] in _QUOTES:
        text = text[1:-1].strip()
    if text.endswith(".") and not _NUM_RE.fullmatch(text[:-1].strip()):
        text = text[:-1].strip()
    text = _strip_symbols(text)
    hint = _strip_symbols(" ".join(gt_hint.split()).lower()) if gt_hint else ""
    value = _as_number(text)
    if value is not None and hint and _as_number(hint) is not None:
        places = _decimal_places(hint)
        rounded = round(value, places)
        text = f"{rounded:.{places}f}" if places else str(int(rounded))
    return text


def compare_answers(pred: str, gt: str, separator: str = "|") -> bool:
    """Multiset comparison over separator-split elements; plain normalized
    equality when no separator is present."""
    if separator and (separator in pred or separator in gt):
        pred_parts = [p.strip() for p in pred.split(separator)]
        gt_parts = [g.strip() for g in gt.split(separator)]
        if len(pred_parts) != len(gt_parts):
            return False
        remaining = [(g, normalize_answer(g, g)) for g in gt_parts]
        for p in pred_parts:
            for i, (g_raw, g_norm) in enumerate(remaining):
                if normalize_answer(p, g_raw) == g_norm:
                    del remaining[i]
                    break
            else:
                return False
        return True
    return normalize_answer(pred, gt) == normalize_answer(gt, gt)


def verify(
    sample: Sample,
    annotation: Annotation | None,
    exec_result: ExecResult | None,
) -> VerifiedRecord:
    """Verdict chain: format -> execution status -> answer comparison."""
    if annotation is None:
        return VerifiedRecord(sample, None, exec_result, "rejected_format")
    if exec_result is None or exec_result.status != "ok":
        return VerifiedRecord(sample, annotation, exec_result, "rejected_exec")
    pred = exec_result.stdout.strip()
    gt = sample.gt_answer
    norm_pred = normalize_answer(pred, gt)
    norm_gt = normalize_answer(gt, gt)
    if compare_answers(pred, gt, sample.gt_list_separator):
        verdict = "accepted"
    else:
        verdict = "rejected_mismatch"
    return VerifiedRecord(sample, annotation, exec_result, verdict, norm_pred, norm_gt)


# ---------------------------------------------------------------------------
# Length filtering and down-sampling
# ---------------------------------------------------------------------------

def filter_lengths(
    records: list[VerifiedRecord],
    tag_token_limit: int = DEFAULT_TAG_TOKEN_LIMIT,
    tsu_keep: int = DEFAULT_TSU_KEEP,
) -> list[VerifiedRecord]:
    """Drop over-long TQA/TFV records; keep only the shortest TSU records.

    TQA/TFV: a record is dropped iff its reason or code tag exceeds the token
    limit. TSU: per task, accepted records are sorted ascending by total
    tokens (ties by sample id) and the first ``tsu_keep`` survive.
    """
    kept: list[VerifiedRecord] = []
    tsu_buckets: dict[Task, list[VerifiedRecord]] = {}
    for rec in records:
        if rec.annotation is None:
            kept.append(rec)
            continue
        category = rec.sample.task.category
        if category is TaskCategory.TSU:
            tsu_buckets.setdefault(rec.sample.task, []).append(rec)
        else:
            counts = rec.annotation.token_counts
            if counts.reason > tag_token_limit or counts.code > tag_token_limit:
                continue
            kept.append(rec)
    for task_records in tsu_buckets.values():
        task_records.sort(key=lambda r: (r.annotation.token_counts.total, r.sample.id))
        kept.extend(task_records[:tsu_keep])
    return kept


def downsample(
    records: list[VerifiedRecord],
    targets: dict[Task, int],
    seed: int = 0,
) -> list[VerifiedRecord]:
    """Uniform per-task subset of size min(target, available); deterministic
    for a fixed seed. Tasks without a target are kept whole."""
    by_task: dict[Task, list[VerifiedRecord]] = {}
    for rec in records:
        by_task.setdefault(rec.sample.task, []).append(rec)
    rng = random.Random(seed)
    out: list[VerifiedRecord] = []
    for task in sorted(by_task, key=lambda t: t.value):
        bucket = sorted(by_task[task], key=lambda r: r.sample.id)
        target = targets.get(task)
        if target is None or target >= len(bucket):
            out.extend(bucket)
        elif target > 0:
            out.extend(rng.sample(bucket, target))
        # target 0: task removed
    return out


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------

@dataclass
class CurationStats:
    verdict_counts: dict[str, dict[str, int]]  # task -> verdict -> count
    rejection_rate: dict[str, float]  # task -> rejected / generated
    mean_reason_tokens: float
    mean_code_tokens: float
    mean_total_tokens: float
    token_percentiles: dict[str, float] = field(default_factory=dict)
    n_records: int = 0


def compute_stats(records: list[VerifiedRecord]) -> CurationStats:
    """Verdict histogram, per-task rejection rate, and token-length summary.

    Rejection rate is rejected-any / generated within each task; token means
    cover records that parsed (the others have no tag contents to measure).
    """
    counts: dict[str, dict[str, int]] = {}
    for rec in records:
        task_counts = counts.setdefault(rec.sample.task.value, dict.fromkeys(VERDICTS, 0))
        task_counts[rec.verdict] += 1
    rates = {}
    for task, task_counts in counts.items():
        total = sum(task_counts.values())
        rejected = total - task_counts["accepted"]
        rates[task] = rejected / total if total else 0.0
    parsed = [r.annotation.token_counts for r in records if r.annotation is not None]
    mean = lambda xs: float(stats_mod.fmean(xs)) if xs else 0.0
    totals = sorted(c.total for c in parsed)
    percentiles = {}
    if totals:
        for p in (50, 90, 99):
            idx = min(len(totals) - 1, round(p / 100 * (len(totals) - 1)))
            percentiles[f"p{p}_total"] = float(totals[idx])
    return CurationStats(
        verdict_counts=counts,
        rejection_rate=rates,
        mean_reason_tokens=mean([c.reason for c in parsed]),
        mean_code_tokens=mean([c.code for c in parsed]),
        mean_total_tokens=mean([c.total for c in parsed]),
        token_percentiles=percentiles,
        n_records=len(records),
    )


def render_stats(stats: CurationStats) -> str:
    """Human-readable stats table."""
    lines = [f"records: {stats.n_records}", ""]
    header = f"{'task':<10} " + " ".join(f"{v:>18}" for v in VERDICTS) + f" {'rej.rate':>9}"
    lines.append(header)
    for task in sorted(stats.verdict_counts):
        counts = stats.verdict_counts[task]
        row = f"{task:<10} " + " ".join(f"{counts[v]:>18}" for v in VERDICTS)
        row += f" {stats.rejection_rate[task]:>9.3f}"
        lines.append(row)
    lines.append("")
    lines.append(
        f"mean tokens: reason {stats.mean_reason_tokens:.1f}, "
        f"code {stats.mean_code_tokens:.1f}, total {stats.mean_total_tokens:.1f}"
    )
    for name, value in stats.token_percentiles.items():
        lines.append(f"{name}: {value:.0f}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

_REQUIRED_FIELDS = (
    "id",
    "task",
    "category",
    "table_format",
    "table_source",
    "question",
    "gt_answer",
    "reason",
    "code",
    "answer",
    "exec_stdout",
    "verdict",
    "token_counts",
)


def record_to_json(rec: VerifiedRecord) -> dict:
    ann = rec.annotation
    exec_result = rec.exec
    return {
        "id": rec.sample.id,
        "task": rec.sample.task.value,
        "category": rec.sample.task.category.value,
        "table_format": rec.sample.table_format.value,
        "table_source": rec.sample.table_source,
        "question": rec.sample.question,
        "gt_answer": rec.sample.gt_answer,
        "gt_list_separator": rec.sample.gt_list_separator,
        "reason": ann.reason if ann else "",
        "code": ann.code if ann else "",
        "answer": ann.answer if ann else "",
        "raw_response": ann.raw if ann else "",
        "exec_stdout": exec_result.stdout if exec_result else "",
        "exec_status": exec_result.status if exec_result else "",
        "verdict": rec.verdict,
        "normalized_pred": rec.normalized_pred,
        "normalized_gt": rec.normalized_gt,
        "token_counts": {
            "reason": ann.token_counts.reason if ann else 0,
            "code": ann.token_counts.code if ann else 0,
            "answer": ann.token_counts.answer if ann else 0,
            "total": ann.token_counts.total if ann else 0,
        },
    }


def record_from_json(obj: dict, line_no: int | None = None) -> VerifiedRecord:
    for fld in _REQUIRED_FIELDS:
        if fld not in obj:
            raise SchemaViolationError(f"missing required field {fld!r}", line_no, fld)
    sample = Sample(
        id=obj["id"],
        task=Task(obj["task"]),
        table_source=obj["table_source"],
        table_format=TableFormat(obj["table_format"]),
        question=obj["question"],
        gt_answer=obj["gt_answer"],
        gt_list_separator=obj.get("gt_list_separator", "|"),
    )
    tc = obj["token_counts"]
    annotation = None
    if obj["verdict"] != "rejected_format" or obj.get("raw_response"):
        annotation = Annotation(
            reason=obj["reason"],
            code=obj["code"],
            answer=obj["answer"],
            raw=obj.get("raw_response", ""),
            token_counts=TokenCounts(tc["reason"], tc["code"], tc["answer"], tc["total"]),
        )
    if obj["verdict"] == "rejected_format":
        annotation = None
    exec_result = None
    if obj.get("exec_status"):
        exec_result = ExecResult(obj["exec_status"], obj["exec_stdout"], "", 0.0)
    return VerifiedRecord(
        sample=sample,
        annotation=annotation,
        exec=exec_result,
        verdict=obj["verdict"],
        normalized_pred=obj.get("normalized_pred", ""),
        normalized_gt=obj.get("normalized_gt", ""),
    )


def write_dataset(records: list[VerifiedRecord], path: str | Path) -> None:
    """Newline-delimited JSON records behind a sentinel comment line."""
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(DATASET_SENTINEL + "\n")
            for rec in records:
                fh.write(json.dumps(record_to_json(rec), ensure_ascii=False) + "\n")
    except OSError as exc:
        raise DatasetIOError(f"cannot write dataset {path}: {exc}") from exc


def read_dataset(path: str | Path) -> list[VerifiedRecord]:
    records: list[VerifiedRecord] = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DatasetIOError(f"cannot read dataset {path}: {exc}") from exc
    with fh:
        for line_no, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaViolationError(f"invalid JSON: {exc}", line_no) from exc
            records.append(record_from_json(obj, line_no))
    return records


def reverify(records: list[VerifiedRecord]) -> list[VerifiedRecord]:
    """Re-run the verdict chain over persisted records; verdicts must reproduce."""
    return [verify(r.sample, r.annotation, r.exec) for r in records]
