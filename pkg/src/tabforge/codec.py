"""Parse raw annotator text into the <reason>/<code>/<answer> triple.

The same exactly-once-in-order predicate backs both annotation parsing and
the binary format reward, so the two can never drift apart.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable

from .errors import AnnotationParseError

TAG_ORDER = ("reason", "code", "answer")

TokenCounter = Callable[[str], int]

_WORD_OR_PUNCT = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def default_token_counter(text: str) -> int:
    """Unicode word runs plus individual punctuation marks.

    Not a model tokenizer; all token thresholds in the pipeline are relative
    to whichever counter is configured.
    """
    return len(_WORD_OR_PUNCT.findall(text))


@dataclass(frozen=True)
class TokenCounts:
    reason: int
    code: int
    answer: int
    total: int


@dataclass(frozen=True)
class Annotation:
    reason: str
    code: str
    answer: str
    raw: str
    token_counts: TokenCounts


@dataclass(frozen=True)
class FormatVerdict:
    ok: bool
    missing_tags: tuple[str, ...]
    out_of_order: bool
    extra_duplicate_tags: bool


def _scan_blocks(raw: str, tag: str) -> tuple[list[tuple[int, str]], bool]:
    """All closed <tag>...</tag> blocks as (opener position, inner text).

    Scans for literal closing tags: the first closer after each opener wins,
    so stray angle brackets inside code are tolerated. Second value flags an
    opener with no closer.
    """
    opener, closer = f"<{tag}>", f"</{tag}>"
    blocks: list[tuple[int, str]] = []
    pos = 0
    unclosed = False
    while True:
        start = raw.find(opener, pos)
        if start == -1:
            break
        end = raw.find(closer, start + len(opener))
        if end == -1:
            unclosed = True
            break
        blocks.append((start, raw[start + len(opener):end]))
        pos = end + len(closer)
    return blocks, unclosed


_FENCE_RE = re.compile(r"\A```[^\n]*\n(.*?)\n?```\s*\Z", re.DOTALL)


def _strip_code_fence(code: str) -> str:
    m = _FENCE_RE.match(code.strip())
    return m.group(1) if m else code


def parse_annotation(
    raw: str, counter: TokenCounter = default_token_counter
) -> Annotation:
    """Extract the first well-formed block of each tag; text outside tags is ignored."""
    fields: dict[str, str] = {}
    for tag in TAG_ORDER:
        blocks, unclosed = _scan_blocks(raw, tag)
        if blocks:
            fields[tag] = blocks[0][1].strip()
        elif unclosed:
            raise AnnotationParseError("unclosed_tag", tag, fields)
        else:
            raise AnnotationParseError("missing_tag", tag, fields)
    code = _strip_code_fence(fields["code"])
    return Annotation(
        reason=fields["reason"],
        code=code,
        answer=fields["answer"],
        raw=raw,
        token_counts=TokenCounts(
            reason=counter(fields["reason"]),
            code=counter(code),
            answer=counter(fields["answer"]),
            total=counter(raw),
        ),
    )


def check_format(raw: str) -> FormatVerdict:
    """True exactly when all three tags appear exactly once, in order."""
    missing: list[str] = []
    duplicates = False
    first_pos: dict[str, int] = {}
    for tag in TAG_ORDER:
        blocks, unclosed = _scan_blocks(raw, tag)
        if not blocks:
            missing.append(tag)
            continue
        if len(blocks) > 1:
            duplicates = True
        first_pos[tag] = blocks[0][0]
        if unclosed:
            # an extra opener with no closer counts as a duplicate opener
            duplicates = True
    out_of_order = False
    if len(first_pos) == len(TAG_ORDER):
        positions = [first_pos[t] for t in TAG_ORDER]
        out_of_order = positions != sorted(positions)
    ok = not missing and not duplicates and not out_of_order
    return FormatVerdict(ok, tuple(missing), out_of_order, duplicates)


def serialize_annotation(ann: Annotation) -> str:
    """Re-emit the canonical tagged form; reparsing yields equal fields."""
    return (
        f"<reason>{ann.reason}</reason>\n"
        f"<code>{ann.code}</code>\n"
        f"<answer>{ann.answer}</answer>"
    )


def count_tokens(text: str, counter: TokenCounter = default_token_counter) -> int:
    return counter(text)
