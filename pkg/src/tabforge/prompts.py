"""Build the structured annotator input: system prompt, optional tool-use
descriptions, few-shot examples, and the new <table, question, GT answer> block."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import NoExamplesError, SchemaViolationError


class TableFormat(str, enum.Enum):
    HTML = "html"
    MARKDOWN = "markdown"
    LATEX = "latex"


class TaskCategory(str, enum.Enum):
    TQA = "tqa"
    TFV = "tfv"
    TSU = "tsu"


class Task(str, enum.Enum):
    WTQ = "wtq"
    HITAB = "hitab"
    TABMWP = "tabmwp"
    TATQA = "tatqa"
    TABFACT = "tabfact"
    INFOTABS = "infotabs"
    TSD = "tsd"
    TCE = "tce"
    TCL = "tcl"
    MCD = "mcd"
    RCE = "rce"

    @property
    def category(self) -> TaskCategory:
        return _TASK_CATEGORY[self]


_TASK_CATEGORY = {
    Task.WTQ: TaskCategory.TQA,
    Task.HITAB: TaskCategory.TQA,
    Task.TABMWP: TaskCategory.TQA,
    Task.TATQA: TaskCategory.TQA,
    Task.TABFACT: TaskCategory.TFV,
    Task.INFOTABS: TaskCategory.TFV,
    Task.TSD: TaskCategory.TSU,
    Task.TCE: TaskCategory.TSU,
    Task.TCL: TaskCategory.TSU,
    Task.MCD: TaskCategory.TSU,
    Task.RCE: TaskCategory.TSU,
}

DEFAULT_TEMPERATURES = {
    TaskCategory.TQA: 0.3,
    TaskCategory.TFV: 0.3,
    TaskCategory.TSU: 0.1,
}

SYSTEM_PROMPT = """\
You are an expert in table analysis. Your task is to process a textual table to answer a question with a code-driven reasoning explanation.
You will be given few-shot examples to guide the expected reasoning and formatting style.
Your output must strictly follow this structure:
1. Reasoning - enclosed in <reason> tags. Provide clear, concise, and verifiable reasoning steps that logically lead to the final answer.
2. Python Code - enclosed in <code> tags. Write clean, executable Python code that computes the final answer based on the reasoning. The code must print the answer in the correct format.
3. Final Answer - enclosed in <answer> tags. This must contain the final answer or the printed output of the code snippet."""

TOOL_USE_TEXT = """\
Use the following tools to assist in reaching the final answer:
- get_table_2d: Get the 2D grid of the HTML table. Args: html_table: str. Return: list.
- get_cell_location: Get the location of a cell in the table. Args: table_2d: list, value: str, occurrence: int = 1. Return: str.
- get_table_size: Get the size of the table. Args: table_2d: list. Return: str.
- get_cell_value: Get the value of a cell in the table. Args: table_2d: list, row_id: int, col_id: int. Return: str.
- get_row_values: Get the values of a row in the table. Args: table_2d: list, row_id: int. Return: str.
- get_col_values: Get the values of a column in the table. Args: table_2d: list, col_id: int. Return: str.
- get_merged_cell_locations: Get the locations of merged cells in the table. Args: html_table: str. Return: str."""


@dataclass(frozen=True)
class FewShotExample:
    task: Task
    table_format: TableFormat
    prompt_block: str
    response_block: str


@dataclass(frozen=True)
class PromptBundle:
    system_prompt: str
    tool_use: str | None
    shots: tuple[FewShotExample, ...]
    new_input: str
    sampling_temperature: float

    def user_message(self) -> str:
        """Single user message: tool use, shots, then the new input."""
        parts = []
        if self.tool_use:
            parts.append(f"Tool Use:\n{self.tool_use}")
        if self.shots:
            shot_texts = [
                f"Example {i}:\n{s.prompt_block}\n{s.response_block}"
                for i, s in enumerate(self.shots, 1)
            ]
            parts.append("Few-shot Examples:\n" + "\n\n".join(shot_texts))
        parts.append(f"New Input:\n{self.new_input}")
        return "\n\n".join(parts)


def render_tool_use(task: Task) -> str | None:
    """The predefined tool descriptions, present only for structure tasks."""
    return TOOL_USE_TEXT if task.category is TaskCategory.TSU else None


def render_new_input(table_source: str, table_format: TableFormat,
                     question: str, gt_answer: str) -> str:
    return (
        f"Table ({table_format.value}):\n{table_source}\n\n"
        f"Question: {question}\n"
        f"Ground-truth answer: {gt_answer}"
    )


def select_shots(
    task: Task,
    table_format: TableFormat,
    pool: list[FewShotExample],
    k: int,
) -> tuple[FewShotExample, ...]:
    """Fallback cascade: exact (task, format), then (category, format), then category.

    Selection is the first k pool entries at the matching level, so a fixed
    pool order gives a fixed result.
    """
    if k <= 0:
        return ()
    exact = [e for e in pool if e.task is task and e.table_format is table_format]
    if exact:
        return tuple(exact[:k])
    cat = task.category
    cat_fmt = [e for e in pool if e.task.category is cat and e.table_format is table_format]
    if cat_fmt:
        return tuple(cat_fmt[:k])
    cat_any = [e for e in pool if e.task.category is cat]
    if cat_any:
        return tuple(cat_any[:k])
    raise NoExamplesError(f"no few-shot examples for category {cat.value!r}")


def build_prompt(
    task: Task,
    table_format: TableFormat,
    table_source: str,
    question: str,
    gt_answer: str,
    pool: list[FewShotExample],
    k: int = 2,
    temperature: float | None = None,
) -> PromptBundle:
    shots = select_shots(task, table_format, pool, k)
    temp = DEFAULT_TEMPERATURES[task.category] if temperature is None else temperature
    return PromptBundle(
        system_prompt=SYSTEM_PROMPT,
        tool_use=render_tool_use(task),
        shots=shots,
        new_input=render_new_input(table_source, table_format, question, gt_answer),
        sampling_temperature=temp,
    )


def load_pool(path: str | Path) -> list[FewShotExample]:
    """Few-shot pool file: JSONL of {task, table_format, prompt_block, response_block}."""
    pool = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaViolationError(f"invalid JSON: {exc}", line_no) from exc
            for fld in ("task", "table_format", "prompt_block", "response_block"):
                if fld not in rec:
                    raise SchemaViolationError(f"missing field {fld!r}", line_no, fld)
            pool.append(
                FewShotExample(
                    task=Task(rec["task"]),
                    table_format=TableFormat(rec["table_format"]),
                    prompt_block=rec["prompt_block"],
                    response_block=rec["response_block"],
                )
            )
    return pool
