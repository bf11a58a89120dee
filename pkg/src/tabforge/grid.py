"""Merged-cell-aware rectangular table grid and its tool operations.

The grid is the single in-memory table representation: merged regions are
expanded so every covered coordinate holds the region's value, and all
indices are 1-based (table questions count from 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import CellNotFoundError, MalformedTableError, OutOfBoundsError

SOURCE_FORMATS = ("html", "markdown", "latex")

_ESCAPES = {"\\": "\\\\", "\t": "\\t", "\n": "\\n", "\r": "\\r"}


def _escape_cell(text: str) -> str:
    out = []
    for ch in text:
        out.append(_ESCAPES.get(ch, ch))
    return "".join(out)


def _unescape_cell(text: str) -> str:
    out = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            nxt = text[i + 1]
            if nxt == "t":
                out.append("\t")
            elif nxt == "n":
                out.append("\n")
            elif nxt == "r":
                out.append("\r")
            elif nxt == "\\":
                out.append("\\")
            else:
                out.append(nxt)
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


@dataclass(frozen=True, order=True)
class MergedRegion:
    """Rectangular block of coordinates sharing one value (1-based, inclusive)."""

    row_start: int
    row_end: int
    col_start: int
    col_end: int
    value: str = field(compare=False, default="")

    def __post_init__(self) -> None:
        if self.row_start > self.row_end or self.col_start > self.col_end:
            raise ValueError(f"inverted region bounds: {self}")
        if self.row_start < 1 or self.col_start < 1:
            raise ValueError(f"region indices are 1-based: {self}")
        if self.area < 2:
            raise ValueError(f"merged region must span >= 2 coordinates: {self}")

    @property
    def area(self) -> int:
        return (self.row_end - self.row_start + 1) * (self.col_end - self.col_start + 1)

    def covers(self, row: int, col: int) -> bool:
        return self.row_start <= row <= self.row_end and self.col_start <= col <= self.col_end

    def coordinates(self):
        for r in range(self.row_start, self.row_end + 1):
            for c in range(self.col_start, self.col_end + 1):
                yield (r, c)


@dataclass(frozen=True)
class CellRef:
    """1-based (row, col) coordinate."""

    row: int
    col: int


class TableGrid:
    """Immutable rectangular grid of cell strings with merged regions.

    ``cells`` is row-major; merged regions are pre-expanded, so every covered
    coordinate already holds the region's value. ``source_format`` records
    provenance only and does not participate in equality.
    """

    __slots__ = ("n_rows", "n_cols", "cells", "merges", "source_format")

    def __init__(
        self,
        cells: list[list[str]],
        merges: list[MergedRegion] | None = None,
        source_format: str = "html",
    ):
        merges = sorted(merges or [], key=lambda m: (m.row_start, m.col_start))
        if not cells or not cells[0]:
            raise MalformedTableError("grid must have at least one row and one column")
        n_rows = len(cells)
        n_cols = len(cells[0])
        for i, row in enumerate(cells):
            if len(row) != n_cols:
                raise MalformedTableError(
                    f"row {i + 1} has {len(row)} cells, expected {n_cols}"
                )
        if source_format not in SOURCE_FORMATS:
            raise ValueError(f"unknown source format: {source_format!r}")
        covered: set[tuple[int, int]] = set()
        for m in merges:
            if m.row_end > n_rows or m.col_end > n_cols:
                raise MalformedTableError(f"merged region out of bounds: {m}")
            for coord in m.coordinates():
                if coord in covered:
                    raise MalformedTableError(f"overlapping merged regions at {coord}")
                covered.add(coord)
                r, c = coord
                if cells[r - 1][c - 1] != m.value:
                    raise MalformedTableError(
                        f"cell {coord} not expanded to its region value {m.value!r}"
                    )
        object.__setattr__(self, "n_rows", n_rows)
        object.__setattr__(self, "n_cols", n_cols)
        object.__setattr__(self, "cells", tuple(tuple(row) for row in cells))
        object.__setattr__(self, "merges", tuple(merges))
        object.__setattr__(self, "source_format", source_format)

    def __setattr__(self, name, value):  # pragma: no cover - defensive
        raise AttributeError("TableGrid is immutable")

    def __eq__(self, other) -> bool:
        if not isinstance(other, TableGrid):
            return NotImplemented
        return self.cells == other.cells and self.merges == other.merges

    def __hash__(self) -> int:
        return hash((self.cells, self.merges))

    def __repr__(self) -> str:
        return (
            f"TableGrid({self.n_rows}x{self.n_cols}, "
            f"{len(self.merges)} merges, {self.source_format})"
        )

    # -- tool operations -------------------------------------------------

    def size(self) -> tuple[int, int]:
        """(n_rows, n_cols)."""
        return (self.n_rows, self.n_cols)

    def _check_bounds(self, row: int, col: int) -> None:
        if not (1 <= row <= self.n_rows) or not (1 <= col <= self.n_cols):
            raise OutOfBoundsError(
                f"({row}, {col}) outside {self.n_rows}x{self.n_cols} grid"
            )

    def cell_value(self, at: CellRef | tuple[int, int]) -> str:
        row, col = (at.row, at.col) if isinstance(at, CellRef) else at
        self._check_bounds(row, col)
        return self.cells[row - 1][col - 1]

    def row_values(self, row: int) -> list[str]:
        if not (1 <= row <= self.n_rows):
            raise OutOfBoundsError(f"row {row} outside 1..{self.n_rows}")
        return list(self.cells[row - 1])

    def col_values(self, col: int) -> list[str]:
        if not (1 <= col <= self.n_cols):
            raise OutOfBoundsError(f"col {col} outside 1..{self.n_cols}")
        return [row[col - 1] for row in self.cells]

    def cell_location(self, value: str, occurrence: int = 1) -> CellRef:
        """Row-major scan for the occurrence-th exact match."""
        if occurrence < 1:
            raise ValueError("occurrence is 1-based")
        seen = 0
        for r in range(1, self.n_rows + 1):
            for c in range(1, self.n_cols + 1):
                if self.cells[r - 1][c - 1] == value:
                    seen += 1
                    if seen == occurrence:
                        return CellRef(r, c)
        raise CellNotFoundError(
            f"value {value!r}: found {seen} occurrence(s), wanted {occurrence}"
        )

    def merged_regions(self) -> list[MergedRegion]:
        """Regions sorted by (row_start, col_start)."""
        return list(self.merges)

    def to_canonical_text(self) -> str:
        """Deterministic lossless text form; round-trips via from_canonical_text."""
        lines = [f"GRID {self.n_rows} {self.n_cols}"]
        for row in self.cells:
            lines.append("\t".join(_escape_cell(c) for c in row))
        for m in self.merges:
            lines.append(f"MERGE {m.row_start} {m.row_end} {m.col_start} {m.col_end}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_canonical_text(cls, text: str, source_format: str = "html") -> "TableGrid":
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if not lines or not lines[0].startswith("GRID "):
            raise MalformedTableError("canonical text must start with a GRID header")
        parts = lines[0].split()
        if len(parts) != 3:
            raise MalformedTableError(f"bad GRID header: {lines[0]!r}")
        try:
            n_rows, n_cols = int(parts[1]), int(parts[2])
        except ValueError as exc:
            raise MalformedTableError(f"bad GRID header: {lines[0]!r}") from exc
        if len(lines) < 1 + n_rows:
            raise MalformedTableError("canonical text truncated before all rows")
        cells = []
        for i in range(1, 1 + n_rows):
            raw = lines[i].split("\t")
            if len(raw) != n_cols:
                raise MalformedTableError(
                    f"row {i} has {len(raw)} cells, header says {n_cols}"
                )
            cells.append([_unescape_cell(c) for c in raw])
        merges = []
        for line in lines[1 + n_rows:]:
            if not line.startswith("MERGE "):
                raise MalformedTableError(f"unexpected canonical line: {line!r}")
            nums = line.split()[1:]
            if len(nums) != 4:
                raise MalformedTableError(f"bad MERGE line: {line!r}")
            rs, re_, cs, ce = (int(n) for n in nums)
            if not (1 <= rs <= re_ <= n_rows and 1 <= cs <= ce <= n_cols):
                raise MalformedTableError(f"MERGE region out of bounds: {line!r}")
            merges.append(MergedRegion(rs, re_, cs, ce, cells[rs - 1][cs - 1]))
        return cls(cells, merges, source_format)


# Module-level aliases matching the tool-operation names.

def table_size(grid: TableGrid) -> tuple[int, int]:
    return grid.size()


def cell_value(grid: TableGrid, at: CellRef | tuple[int, int]) -> str:
    return grid.cell_value(at)


def row_values(grid: TableGrid, row: int) -> list[str]:
    return grid.row_values(row)


def col_values(grid: TableGrid, col: int) -> list[str]:
    return grid.col_values(col)


def cell_location(grid: TableGrid, value: str, occurrence: int = 1) -> CellRef:
    return grid.cell_location(value, occurrence)


def merged_regions(grid: TableGrid) -> list[MergedRegion]:
    return grid.merged_regions()


def to_canonical_text(grid: TableGrid) -> str:
    return grid.to_canonical_text()
