"""Shared test helpers: an independent brute-force grid oracle and random
table-source generators for the three formats."""

from __future__ import annotations

import random
from dataclasses import dataclass


@dataclass(frozen=True)
class SpanSpec:
    """One merged rectangle, 1-based inclusive."""

    row_start: int
    row_end: int
    col_start: int
    col_end: int
    value: str


@dataclass(frozen=True)
class GridSpec:
    n_rows: int
    n_cols: int
    spans: tuple[SpanSpec, ...]

    def base_value(self, r: int, c: int) -> str:
        return f"c{r}x{c}"


def naive_paint(spec: GridSpec) -> list[list[str]]:
    """Independent oracle: fill base values, then paint each span rectangle."""
    cells = [
        [spec.base_value(r, c) for c in range(1, spec.n_cols + 1)]
        for r in range(1, spec.n_rows + 1)
    ]
    for s in spec.spans:
        for r in range(s.row_start, s.row_end + 1):
            for c in range(s.col_start, s.col_end + 1):
                cells[r - 1][c - 1] = s.value
    return cells


def naive_cell_location(cells: list[list[str]], value: str, occurrence: int = 1):
    seen = 0
    for r, row in enumerate(cells, 1):
        for c, text in enumerate(row, 1):
            if text == value:
                seen += 1
                if seen == occurrence:
                    return (r, c)
    return None


def random_grid_spec(rng: random.Random, max_rows=8, max_cols=8, max_spans=3) -> GridSpec:
    n_rows = rng.randint(1, max_rows)
    n_cols = rng.randint(1, max_cols)
    covered: set[tuple[int, int]] = set()
    spans: list[SpanSpec] = []
    for i in range(rng.randint(0, max_spans)):
        for _ in range(20):  # rejection sampling for a free rectangle
            rs = rng.randint(1, n_rows)
            cs = rng.randint(1, n_cols)
            re_ = min(n_rows, rs + rng.randint(0, 2))
            ce = min(n_cols, cs + rng.randint(0, 2))
            if (re_ - rs + 1) * (ce - cs + 1) < 2:
                continue
            coords = {
                (r, c) for r in range(rs, re_ + 1) for c in range(cs, ce + 1)
            }
            if coords & covered:
                continue
            covered |= coords
            spans.append(SpanSpec(rs, re_, cs, ce, f"s{i}v"))
            break
    return GridSpec(n_rows, n_cols, tuple(spans))


def _span_at(spec: GridSpec, r: int, c: int) -> SpanSpec | None:
    for s in spec.spans:
        if s.row_start <= r <= s.row_end and s.col_start <= c <= s.col_end:
            return s
    return None


def render_html(spec: GridSpec) -> str:
    rows = []
    for r in range(1, spec.n_rows + 1):
        cells = []
        for c in range(1, spec.n_cols + 1):
            s = _span_at(spec, r, c)
            if s is None:
                cells.append(f"<td>{spec.base_value(r, c)}</td>")
            elif (r, c) == (s.row_start, s.col_start):
                attrs = ""
                if s.row_end > s.row_start:
                    attrs += f' rowspan="{s.row_end - s.row_start + 1}"'
                if s.col_end > s.col_start:
                    attrs += f' colspan="{s.col_end - s.col_start + 1}"'
                cells.append(f"<td{attrs}>{s.value}</td>")
            # other covered coordinates are consumed by the span
        rows.append("<tr>" + "".join(cells) + "</tr>")
    return "<table>" + "".join(rows) + "</table>"


def render_markdown(spec: GridSpec) -> str:
    assert not spec.spans, "markdown cannot express spans"
    lines = []
    for r in range(1, spec.n_rows + 1):
        lines.append(
            "| " + " | ".join(spec.base_value(r, c) for c in range(1, spec.n_cols + 1)) + " |"
        )
        if r == 1:
            lines.append("|" + "---|" * spec.n_cols)
    return "\n".join(lines)


def render_latex(spec: GridSpec) -> str:
    lines = []
    for r in range(1, spec.n_rows + 1):
        cells = []
        for c in range(1, spec.n_cols + 1):
            s = _span_at(spec, r, c)
            if s is None:
                cells.append(spec.base_value(r, c))
            elif (r, c) == (s.row_start, s.col_start):
                rs = s.row_end - s.row_start + 1
                cs = s.col_end - s.col_start + 1
                if rs > 1 and cs > 1:
                    cells.append(f"\\multicolumn{{{cs}}}{{c}}{{\\multirow{{{rs}}}{{*}}{{{s.value}}}}}")
                elif rs > 1:
                    cells.append(f"\\multirow{{{rs}}}{{*}}{{{s.value}}}")
                else:
                    cells.append(f"\\multicolumn{{{cs}}}{{c}}{{{s.value}}}")
            elif r == s.row_start:
                continue  # same-row columns consumed by \multicolumn
            else:
                cells.append("")  # continuation placeholder under \multirow
        lines.append(" & ".join(cells) + r" \\")
    colspec = "c" * spec.n_cols
    return "\\begin{tabular}{" + colspec + "}\n" + "\n".join(lines) + "\n\\end{tabular}"
