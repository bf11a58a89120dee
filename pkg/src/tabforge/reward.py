"""Binary accuracy/format rewards and group-normalized advantages.

Each rollout earns two binary rewards (answer correct, format correct) whose
sum is the total reward; advantages normalize each total against the group's
mean and population standard deviation, with a small epsilon so constant
groups come out all-zero instead of dividing by zero. The surrounding RL loss
is the trainer's job; this module hands back advantages plus the recorded KL
coefficient.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass

from pydantic import BaseModel

from .codec import check_format
from .curate import Sample, compare_answers
from .errors import GroupSizeMismatchError, UnanswerableError
from .grid import TableGrid
from .metrics import resolve_answer
from .sandbox import SandboxPolicy


@dataclass(frozen=True)
class Rollout:
    raw_response: str
    sample_id: str = ""


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 4
    kl_beta: float = 0.05  # recorded for the trainer, unused here
    sampling_temperature: float = 0.5  # recorded for the trainer
    epsilon: float = 1e-8

    def __post_init__(self) -> None:
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")


@dataclass(frozen=True)
class RewardGroup:
    rollouts: tuple[Rollout, ...]
    acc_rewards: tuple[int, ...]
    fmt_rewards: tuple[int, ...]
    total_rewards: tuple[int, ...]
    advantages: tuple[float, ...]
    epsilon: float


def score_rollout(
    rollout: Rollout,
    sample: Sample,
    grid: TableGrid | None = None,
    policy: SandboxPolicy | None = None,
    exec_enabled: bool = True,
    harness_cmd: list[str] | None = None,
) -> tuple[int, int]:
    """(accuracy reward, format reward), both binary.

    Format is the exactly-once-ordered-tags predicate; accuracy applies the
    answer-priority rule and then ground-truth comparison. Any failure along
    the way maps to a 0 reward.
    """
    fmt = 1 if check_format(rollout.raw_response).ok else 0
    try:
        pred = resolve_answer(
            sample.id,
            rollout.raw_response,
            grid,
            policy,
            sample.table_source,
            exec_enabled=exec_enabled,
            harness_cmd=harness_cmd,
        )
        acc = (
            1
            if compare_answers(pred.resolved_answer, sample.gt_answer, sample.gt_list_separator)
            else 0
        )
    except UnanswerableError:
        acc = 0
    return acc, fmt


def advantages(total_rewards: list[float], epsilon: float = 1e-8) -> list[float]:
    """(reward - group mean) / (population std + epsilon)."""
    if len(total_rewards) < 2:
        raise GroupSizeMismatchError("need at least 2 rewards for a group")
    mean = statistics.fmean(total_rewards)
    std = statistics.pstdev(total_rewards)
    return [(r - mean) / (std + epsilon) for r in total_rewards]


def reward_group(
    sample: Sample,
    rollouts: list[Rollout],
    grid: TableGrid | None = None,
    policy: SandboxPolicy | None = None,
    cfg: GrpoConfig = GrpoConfig(),
    exec_enabled: bool = True,
    harness_cmd: list[str] | None = None,
) -> RewardGroup:
    if len(rollouts) != cfg.group_size:
        raise GroupSizeMismatchError(
            f"got {len(rollouts)} rollouts, config group size is {cfg.group_size}"
        )
    acc: list[int] = []
    fmt: list[int] = []
    for rollout in rollouts:
        a, f = score_rollout(
            rollout, sample, grid, policy, exec_enabled=exec_enabled, harness_cmd=harness_cmd
        )
        acc.append(a)
        fmt.append(f)
    totals = [a + f for a, f in zip(acc, fmt)]
    return RewardGroup(
        rollouts=tuple(rollouts),
        acc_rewards=tuple(acc),
        fmt_rewards=tuple(fmt),
        total_rewards=tuple(totals),
        advantages=tuple(advantages([float(t) for t in totals], cfg.epsilon)),
        epsilon=cfg.epsilon,
    )


# ---------------------------------------------------------------------------
# Optional local HTTP endpoint for RL trainers
# ---------------------------------------------------------------------------

SCHEMA_VERSION = "v1"


# module scope so FastAPI can resolve the postponed annotations on the endpoint
class _SampleIn(BaseModel):
    id: str
    task: str
    table_source: str = ""
    table_format: str = "html"
    question: str = ""
    gt_answer: str
    gt_list_separator: str = "|"


class _GroupRequest(BaseModel):
    sample: _SampleIn
    rollouts: list[str]


def create_reward_app(cfg: GrpoConfig = GrpoConfig(), exec_enabled: bool = False):
    """FastAPI app serving group scoring; each request is isolated."""
    from fastapi import FastAPI, HTTPException

    from .prompts import TableFormat, Task

    app = FastAPI(title="tabforge reward service")

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "schema": SCHEMA_VERSION, "group_size": cfg.group_size}

    @app.post("/score")
    def score(req: _GroupRequest) -> dict:
        try:
            sample = Sample(
                id=req.sample.id,
                task=Task(req.sample.task),
                table_source=req.sample.table_source,
                table_format=TableFormat(req.sample.table_format),
                question=req.sample.question,
                gt_answer=req.sample.gt_answer,
                gt_list_separator=req.sample.gt_list_separator,
            )
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        grid = None
        if exec_enabled and req.sample.table_source:
            from .parsers import parse_auto

            try:
                grid = parse_auto(req.sample.table_source, req.sample.table_format).grid
            except Exception as exc:
                raise HTTPException(status_code=400, detail=f"bad table: {exc}") from exc
        rollouts = [Rollout(text, sample.id) for text in req.rollouts]
        try:
            group = reward_group(
                sample, rollouts, grid, cfg=cfg, exec_enabled=exec_enabled and grid is not None
            )
        except GroupSizeMismatchError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return {
            "schema": SCHEMA_VERSION,
            "acc": list(group.acc_rewards),
            "fmt": list(group.fmt_rewards),
            "total": list(group.total_rewards),
            "advantages": list(group.advantages),
            "kl_beta": cfg.kl_beta,
        }

    return app
