"""Stage logic behind the CLI: generate, verify, curate, stats.

Each stage reads the previous stage's artifact and writes its own, so runs
can resume and stages can be re-executed independently at scale.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import codec, curate, gateway, prompts, sandbox
from .errors import SchemaViolationError, TabforgeError
from .parsers import parse_auto
from .prompts import Task, TableFormat


@dataclass
class PipelineConfig:
    samples_path: str = "samples.jsonl"
    pool_path: str = "pool.jsonl"
    raw_path: str = "raw.jsonl"
    verified_path: str = "verified.jsonl"
    dataset_path: str = "dataset.jsonl"
    stats_path: str = "stats.json"
    stats_text_path: str = "stats.txt"
    annotator: gateway.AnnotatorConfig = field(
        default_factory=lambda: gateway.AnnotatorConfig(endpoint_url="mock:pool.jsonl")
    )
    sandbox_policy: sandbox.SandboxPolicy = field(default_factory=sandbox.SandboxPolicy)
    few_shot_k: int = 2
    seed: int = 0
    tag_token_limit: int = curate.DEFAULT_TAG_TOKEN_LIMIT
    tsu_keep: int = curate.DEFAULT_TSU_KEEP
    downsample_targets: dict[str, int] = field(default_factory=dict)
    parallelism: int = 4
    resample_on_reject: bool = False
    temperatures: dict[str, float] = field(default_factory=dict)  # per category

    def config_hash(self) -> str:
        """Stable digest of the configuration, embedded in reports."""
        blob = json.dumps(_config_to_jsonable(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _config_to_jsonable(cfg: PipelineConfig) -> dict:
    out = dataclasses.asdict(cfg)
    policy = out["sandbox_policy"]
    policy["allowed_modules"] = sorted(policy["allowed_modules"])
    policy["banned_call_patterns"] = list(policy["banned_call_patterns"])
    return out


def load_config(path: str | Path | None, **overrides) -> PipelineConfig:
    """YAML config file plus keyword overrides; overrides win."""
    data: dict = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    paths = data.get("paths", {})
    annot = data.get("annotator", {})
    sandbox_cfg = data.get("sandbox", {})
    cfg = PipelineConfig(
        samples_path=paths.get("samples", "samples.jsonl"),
        pool_path=paths.get("pool", "pool.jsonl"),
        raw_path=paths.get("raw", "raw.jsonl"),
        verified_path=paths.get("verified", "verified.jsonl"),
        dataset_path=paths.get("dataset", "dataset.jsonl"),
        stats_path=paths.get("stats", "stats.json"),
        stats_text_path=paths.get("stats_text", "stats.txt"),
        annotator=gateway.AnnotatorConfig(
            endpoint_url=annot.get("endpoint_url", "mock:fixtures/annotator.jsonl"),
            model_id=annot.get("model_id", "annotator"),
            max_output_tokens=annot.get("max_output_tokens", 4096),
            temperature=annot.get("temperature"),
            request_timeout=annot.get("request_timeout", 120.0),
            max_retries=annot.get("max_retries", 3),
            concurrency_limit=annot.get("concurrency_limit", 4),
        ),
        sandbox_policy=sandbox.SandboxPolicy(
            allowed_modules=frozenset(
                sandbox_cfg.get("allowed_modules", sandbox.DEFAULT_ALLOWED_MODULES)
            ),
            timeout=sandbox_cfg.get("timeout", 10.0),
            max_stdout_bytes=sandbox_cfg.get("max_stdout_bytes", 64 * 1024),
        ),
        few_shot_k=data.get("few_shot_k", 2),
        seed=data.get("seed", 0),
        tag_token_limit=data.get("tag_token_limit", curate.DEFAULT_TAG_TOKEN_LIMIT),
        tsu_keep=data.get("tsu_keep", curate.DEFAULT_TSU_KEEP),
        downsample_targets=data.get("downsample_targets", {}) or {},
        parallelism=data.get("parallelism", 4),
        resample_on_reject=data.get("resample_on_reject", False),
        temperatures=data.get("temperatures", {}) or {},
    )
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    return cfg


# ---------------------------------------------------------------------------
# Samples
# ---------------------------------------------------------------------------

def load_samples(path: str | Path) -> list[curate.Sample]:
    samples = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaViolationError(f"invalid JSON: {exc}", line_no) from exc
            for fld in ("id", "task", "table_format", "table_source", "question", "gt_answer"):
                if fld not in obj:
                    raise SchemaViolationError(f"missing field {fld!r}", line_no, fld)
            if obj["id"] in seen:
                raise SchemaViolationError(f"duplicate sample id {obj['id']!r}", line_no, "id")
            seen.add(obj["id"])
            samples.append(
                curate.Sample(
                    id=obj["id"],
                    task=Task(obj["task"]),
                    table_source=obj["table_source"],
                    table_format=TableFormat(obj["table_format"]),
                    question=obj["question"],
                    gt_answer=str(obj["gt_answer"]),
                    gt_list_separator=obj.get("gt_list_separator", "|"),
                )
            )
    return samples


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

@dataclass
class StageOutcome:
    processed: int
    skipped: int = 0
    failures: int = 0


def run_generate(cfg: PipelineConfig) -> StageOutcome:
    """Prompt the annotator for every sample without a raw completion yet.

    Raw completions are appended to the raw artifact keyed by sample id, so
    an interrupted run resumes where it stopped.
    """
    samples = load_samples(cfg.samples_path)
    pool = prompts.load_pool(cfg.pool_path) if Path(cfg.pool_path).exists() else []
    done: set[str] = set()
    raw_path = Path(cfg.raw_path)
    if raw_path.exists():
        with open(raw_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line and not line.startswith("#"):
                    done.add(json.loads(line)["id"])
    todo = [s for s in samples if s.id not in done]
    bundles = []
    for sample in todo:
        temp = cfg.temperatures.get(sample.task.category.value)
        bundles.append(
            prompts.build_prompt(
                sample.task,
                sample.table_format,
                sample.table_source,
                sample.question,
                sample.gt_answer,
                pool,
                k=cfg.few_shot_k,
                temperature=temp,
            )
        )
    completions = gateway.complete_batch(bundles, cfg.annotator)
    failures = 0
    with open(raw_path, "a", encoding="utf-8") as fh:
        for sample, completion in zip(todo, completions):
            if completion.finish_reason == "error":
                failures += 1
            fh.write(
                json.dumps(
                    {
                        "id": sample.id,
                        "raw_text": completion.raw_text,
                        "finish_reason": completion.finish_reason,
                        "error": completion.error,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
    return StageOutcome(processed=len(todo), skipped=len(done), failures=failures)


def _load_raw(path: str | Path) -> dict[str, dict]:
    raws: dict[str, dict] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaViolationError(f"invalid JSON: {exc}", line_no) from exc
            if "id" not in obj or "raw_text" not in obj:
                raise SchemaViolationError("raw record needs id and raw_text", line_no)
            raws[obj["id"]] = obj
    return raws


def verify_one(
    sample: curate.Sample,
    raw_text: str,
    policy: sandbox.SandboxPolicy,
    harness_cmd: list[str] | None = None,
) -> curate.VerifiedRecord:
    """Parse, execute, and verify a single raw completion."""
    try:
        annotation = codec.parse_annotation(raw_text)
    except TabforgeError:
        return curate.verify(sample, None, None)
    try:
        grid = parse_auto(sample.table_source, sample.table_format.value).grid
    except TabforgeError:
        result = sandbox.ExecResult("runtime_error", "", "unparseable table source", 0.0)
        return curate.verify(sample, annotation, result)
    result = sandbox.execute(
        annotation.code, grid, policy, sample.table_source, harness_cmd=harness_cmd
    )
    return curate.verify(sample, annotation, result)


def run_verify(
    cfg: PipelineConfig, harness_cmd: list[str] | None = None
) -> StageOutcome:
    """Execute and verify every raw completion; writes the verified artifact."""
    samples = {s.id: s for s in load_samples(cfg.samples_path)}
    raws = _load_raw(cfg.raw_path)
    records = []
    failures = 0
    jobs = []
    for sid in sorted(raws):
        if sid not in samples:
            raise SchemaViolationError(f"raw completion for unknown sample id {sid!r}")
        jobs.append((samples[sid], raws[sid]["raw_text"]))

    from concurrent.futures import ThreadPoolExecutor

    def one(job: tuple[curate.Sample, str]) -> curate.VerifiedRecord:
        return verify_one(job[0], job[1], cfg.sandbox_policy, harness_cmd)

    with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
        records = list(pool.map(one, jobs))
    failures = sum(1 for r in records if r.verdict != "accepted")
    curate.write_dataset(records, cfg.verified_path)
    return StageOutcome(processed=len(records), failures=failures)


def run_curate(cfg: PipelineConfig) -> StageOutcome:
    """Length-filter and down-sample accepted records into the final dataset."""
    records = curate.read_dataset(cfg.verified_path)
    accepted = [r for r in records if r.verdict == "accepted"]
    filtered = curate.filter_lengths(accepted, cfg.tag_token_limit, cfg.tsu_keep)
    targets = {Task(k): v for k, v in cfg.downsample_targets.items()}
    final = curate.downsample(filtered, targets, cfg.seed)
    curate.write_dataset(final, cfg.dataset_path)
    return StageOutcome(processed=len(final), skipped=len(records) - len(final))


def run_stats(cfg: PipelineConfig) -> curate.CurationStats:
    """Stats over the verified artifact; JSON report plus human-readable table."""
    records = curate.read_dataset(cfg.verified_path)
    stats = curate.compute_stats(records)
    report = {
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "n_records": stats.n_records,
        "verdict_counts": stats.verdict_counts,
        "rejection_rate": stats.rejection_rate,
        "mean_reason_tokens": stats.mean_reason_tokens,
        "mean_code_tokens": stats.mean_code_tokens,
        "mean_total_tokens": stats.mean_total_tokens,
        "token_percentiles": stats.token_percentiles,
    }
    with open(cfg.stats_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(cfg.stats_text_path, "w", encoding="utf-8") as fh:
        fh.write(f"config={cfg.config_hash()} seed={cfg.seed}\n")
        fh.write(curate.render_stats(stats))
    return stats
