"""Exception hierarchy shared across the package."""

from __future__ import annotations


class TabforgeError(Exception):
    """Base class for all package errors."""


class OutOfBoundsError(TabforgeError):
    """A 1-based row/column index falls outside the grid."""


class CellNotFoundError(TabforgeError):
    """No cell (or too few occurrences) matching the requested value."""


class MalformedTableError(TabforgeError):
    """Source text does not contain a parseable table."""


class SpanOverflowError(TabforgeError):
    """A declared span cannot be reconciled with the table structure."""


class UnknownFormatError(TabforgeError):
    """Format sniffing failed and no hint was given."""


class NoExamplesError(TabforgeError):
    """Few-shot pool has no entry even at the category fallback level."""


class TransportError(TabforgeError):
    """Annotator endpoint unreachable after all retries."""


class BadResponseError(TabforgeError):
    """Annotator endpoint returned a payload we cannot decode."""


class AnnotationParseError(TabforgeError):
    """Raw annotator text is missing or mis-nesting the required tags.

    Carries the failure kind (``missing_tag`` or ``unclosed_tag``) and any
    partially extracted fields for diagnostics.
    """

    def __init__(self, kind: str, tag: str, partial: dict[str, str] | None = None):
        super().__init__(f"{kind}: <{tag}>")
        self.kind = kind
        self.tag = tag
        self.partial = partial or {}


class SpawnFailureError(TabforgeError):
    """Sandbox runtime shim missing, unlaunchable, or broke its contract."""


class DatasetIOError(TabforgeError):
    """Dataset file could not be read or written."""


class SchemaViolationError(TabforgeError):
    """A dataset/prediction line is missing a required field or malformed."""

    def __init__(self, message: str, line_no: int | None = None, field: str | None = None):
        loc = f" (line {line_no})" if line_no is not None else ""
        super().__init__(f"{message}{loc}")
        self.line_no = line_no
        self.field = field


class MissingGtError(TabforgeError):
    """Prediction ids with no matching ground-truth record."""

    def __init__(self, ids: list[str]):
        super().__init__(f"no ground truth for ids: {', '.join(sorted(ids))}")
        self.ids = sorted(ids)


class GroupSizeMismatchError(TabforgeError):
    """Rollout list length differs from the configured group size."""


class UnanswerableError(TabforgeError):
    """Neither code output nor an answer tag yields any text."""
