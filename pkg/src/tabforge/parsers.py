"""Parsers from the three table-code formats (HTML, Markdown, LaTeX) to TableGrid."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from html.parser import HTMLParser

from .errors import MalformedTableError, SpanOverflowError, UnknownFormatError
from .grid import MergedRegion, TableGrid

# Spans larger than this are treated as authoring mistakes, not structure.
_MAX_SPAN = 1000


@dataclass
class ParseReport:
    grid: TableGrid
    warnings: list[str] = field(default_factory=list)


def _collapse_ws(text: str) -> str:
    return " ".join(text.split())


# ---------------------------------------------------------------------------
# HTML
# ---------------------------------------------------------------------------

@dataclass
class _RawCell:
    text: str
    rowspan: int
    colspan: int


class _TableHTMLParser(HTMLParser):
    """Collects the raw cells of the first <table> element."""

    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.rows: list[list[_RawCell]] = []
        self.warnings: list[str] = []
        self._table_depth = 0
        self._seen_table = False
        self._done = False
        self._current_row: list[_RawCell] | None = None
        self._cell: _RawCell | None = None
        self._text: list[str] = []
        self._saw_th = False

    def _span_attr(self, attrs: dict[str, str | None], name: str) -> int:
        raw = attrs.get(name)
        if raw is None:
            return 1
        try:
            value = int(str(raw).strip())
        except ValueError:
            self.warnings.append(f"ignoring non-numeric {name}={raw!r}")
            return 1
        if value > _MAX_SPAN:
            raise SpanOverflowError(f"{name}={value} exceeds the supported span size")
        if value < 1:
            # rowspan=0 means "to the end of the table" in HTML; resolved later.
            return 0 if (name == "rowspan" and value == 0) else 1
        return value

    def handle_starttag(self, tag: str, attrs) -> None:
        if self._done:
            return
        tag = tag.lower()
        if tag == "table":
            self._table_depth += 1
            self._seen_table = True
            if self._table_depth > 1:
                self.warnings.append("nested table flattened into parent cell text")
            return
        if self._table_depth != 1:
            return
        attrd = dict(attrs)
        if tag == "tr":
            self._close_cell()
            self._close_row()
            self._current_row = []
        elif tag in ("td", "th"):
            self._close_cell()
            if self._current_row is None:
                self._current_row = []
                self.warnings.append("cell outside <tr>, implicit row opened")
            if tag == "th":
                self._saw_th = True
            self._cell = _RawCell(
                "",
                rowspan=self._span_attr(attrd, "rowspan"),
                colspan=max(1, self._span_attr(attrd, "colspan")),
            )
            self._text = []
        elif tag == "br" and self._cell is not None:
            self._text.append(" ")

    def handle_endtag(self, tag: str) -> None:
        if self._done:
            return
        tag = tag.lower()
        if tag == "table":
            self._table_depth -= 1
            if self._table_depth == 0:
                self._close_cell()
                self._close_row()
                self._done = True
        elif self._table_depth == 1 and tag in ("td", "th"):
            self._close_cell()
        elif self._table_depth == 1 and tag == "tr":
            self._close_cell()
            self._close_row()

    def handle_data(self, data: str) -> None:
        if self._cell is not None and not self._done:
            self._text.append(data)

    def _close_cell(self) -> None:
        if self._cell is not None:
            self._cell.text = _collapse_ws("".join(self._text))
            assert self._current_row is not None
            self._current_row.append(self._cell)
            self._cell = None
            self._text = []

    def _close_row(self) -> None:
        if self._current_row is not None:
            self.rows.append(self._current_row)
            self._current_row = None

    def finish(self) -> None:
        self._close_cell()
        self._close_row()


def _paint_rows(
    rows: list[list[_RawCell]], warnings: list[str], source_format: str
) -> TableGrid:
    """Place raw cells browser-style: each cell lands at the leftmost free column."""
    n_declared = len(rows)
    occupied: dict[tuple[int, int], str] = {}
    merges: list[MergedRegion] = []
    ragged = False
    for r0, row in enumerate(rows):
        r = r0 + 1
        c = 1
        for cell in row:
            while (r, c) in occupied:
                c += 1
            rowspan = cell.rowspan
            if rowspan == 0:
                rowspan = n_declared - r + 1
            if r + rowspan - 1 > n_declared:
                warnings.append(
                    f"rowspan at ({r}, {c}) overflows the table; clamped to row {n_declared}"
                )
                rowspan = n_declared - r + 1
            colspan = cell.colspan
            for dr in range(rowspan):
                for dc in range(colspan):
                    occupied[(r + dr, c + dc)] = cell.text
            if rowspan * colspan >= 2:
                merges.append(
                    MergedRegion(r, r + rowspan - 1, c, c + colspan - 1, cell.text)
                )
            c += colspan
    if not occupied:
        raise MalformedTableError("table has no cells")
    n_rows = max(r for r, _ in occupied)
    n_cols = max(c for _, c in occupied)
    cells = []
    for r in range(1, n_rows + 1):
        row_cells = []
        for c in range(1, n_cols + 1):
            if (r, c) in occupied:
                row_cells.append(occupied[(r, c)])
            else:
                ragged = True
                row_cells.append("")
        cells.append(row_cells)
    if ragged:
        warnings.append("ragged rows padded with empty cells")
    return TableGrid(cells, merges, source_format)


def parse_html(source: str) -> ParseReport:
    """Parse the first HTML table; rowspan/colspan become MergedRegions."""
    parser = _TableHTMLParser()
    parser.feed(source)
    parser.close()
    parser.finish()
    if not parser._seen_table:
        raise MalformedTableError("no <table> element found")
    # Keep empty <tr> rows: a row fully covered by a rowspan has no cells of
    # its own but still occupies a grid row.
    rows = parser.rows
    if not any(rows):
        raise MalformedTableError("table has no rows with cells")
    warnings = list(parser.warnings)
    if parser._saw_th:
        warnings.append("header cells (<th>) treated as data cells")
    grid = _paint_rows(rows, warnings, "html")
    return ParseReport(grid, warnings)


# ---------------------------------------------------------------------------
# Markdown
# ---------------------------------------------------------------------------

_DELIM_RE = re.compile(r"^\s*\|?\s*:?-{1,}:?\s*(\|\s*:?-{1,}:?\s*)*\|?\s*$")
_PIPE_SPLIT_RE = re.compile(r"(?<!\\)\|")


def _split_md_row(line: str) -> list[str]:
    line = line.strip()
    parts = _PIPE_SPLIT_RE.split(line)
    if parts and parts[0].strip() == "" and line.startswith("|"):
        parts = parts[1:]
    if parts and parts[-1].strip() == "" and line.endswith("|") and not line.endswith("\\|"):
        parts = parts[:-1]
    return [_collapse_ws(p.replace("\\|", "|")) for p in parts]


def parse_markdown(source: str) -> ParseReport:
    """Parse a GitHub-style pipe table. Markdown has no spans, so no merges."""
    lines = [ln for ln in source.splitlines() if ln.strip()]
    table_lines = [ln for ln in lines if "|" in ln or _DELIM_RE.match(ln)]
    if len(table_lines) < 2:
        raise MalformedTableError("need a header row and a delimiter row")
    if not _DELIM_RE.match(table_lines[1]):
        raise MalformedTableError("second row is not a delimiter row")
    warnings: list[str] = []
    rows = [_split_md_row(table_lines[0])]
    for ln in table_lines[2:]:
        if _DELIM_RE.match(ln):
            warnings.append("extra delimiter row ignored")
            continue
        rows.append(_split_md_row(ln))
    n_cols = max(len(r) for r in rows)
    for i, r in enumerate(rows):
        if len(r) < n_cols:
            warnings.append(f"row {i + 1} padded from {len(r)} to {n_cols} cells")
            r.extend([""] * (n_cols - len(r)))
    return ParseReport(TableGrid(rows, [], "markdown"), warnings)


# ---------------------------------------------------------------------------
# LaTeX
# ---------------------------------------------------------------------------

_TABULAR_RE = re.compile(
    r"\\begin\{tabular\}\s*(?:\[[^\]]*\])?\s*\{((?:[^{}]|\{[^{}]*\})*)\}(.*?)\\end\{tabular\}",
    re.DOTALL,
)
_RULE_RE = re.compile(r"\\(?:hline|toprule|midrule|bottomrule)\b|\\cline\s*\{[^}]*\}")
_STRIP_COMMANDS = ("textbf", "textit", "emph", "texttt", "textsc", "underline", "text")


def _count_colspec(spec: str) -> int:
    n = 0
    i = 0
    while i < len(spec):
        ch = spec[i]
        if ch in "clr":
            n += 1
            i += 1
        elif ch in "pmb":
            n += 1
            i += 1
            if i < len(spec) and spec[i] == "{":
                depth = 1
                i += 1
                while i < len(spec) and depth:
                    depth += {"{": 1, "}": -1}.get(spec[i], 0)
                    i += 1
        elif ch == "*":
            # *{k}{cols}: k repetitions of cols
            m = re.match(r"\*\{(\d+)\}\{([^{}]*)\}", spec[i:])
            if m:
                n += int(m.group(1)) * _count_colspec(m.group(2))
                i += m.end()
            else:
                i += 1
        elif ch == "@" or ch == "!":
            i += 1
            if i < len(spec) and spec[i] == "{":
                depth = 1
                i += 1
                while i < len(spec) and depth:
                    depth += {"{": 1, "}": -1}.get(spec[i], 0)
                    i += 1
        else:
            i += 1
    return n


def _split_depth0(text: str, sep: str) -> list[str]:
    """Split on a single-char separator at brace depth 0, honoring backslash escapes."""
    parts = []
    buf = []
    depth = 0
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text) and text[i + 1] in "&%{}#_$":
            buf.append(ch)
            buf.append(text[i + 1])
            i += 2
            continue
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth = max(0, depth - 1)
        if ch == sep and depth == 0:
            parts.append("".join(buf))
            buf = []
        else:
            buf.append(ch)
        i += 1
    parts.append("".join(buf))
    return parts


def _read_braced(text: str, start: int) -> tuple[str, int]:
    """Read a {...} group starting at `start`; returns (inner, index past group)."""
    if start >= len(text) or text[start] != "{":
        raise MalformedTableError(f"expected '{{' at {start} in {text!r}")
    depth = 0
    for i in range(start, len(text)):
        if text[i] == "{":
            depth += 1
        elif text[i] == "}":
            depth -= 1
            if depth == 0:
                return text[start + 1:i], i + 1
    raise MalformedTableError(f"unbalanced braces in {text!r}")


def _clean_latex_text(text: str, warnings: list[str]) -> str:
    """Strip formatting commands to inner text; keep $...$ math verbatim."""
    out = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "$":
            j = text.find("$", i + 1)
            if j == -1:
                out.append(text[i:])
                break
            out.append(text[i:j + 1])
            i = j + 1
        elif ch == "\\":
            m = re.match(r"\\([a-zA-Z]+)\s*", text[i:])
            if m:
                name = m.group(1)
                i += m.end()
                if i < len(text) and text[i] == "{":
                    inner, i = _read_braced(text, i)
                    if name not in _STRIP_COMMANDS:
                        warnings.append(f"unknown command \\{name} stripped to its argument")
                    out.append(_clean_latex_text(inner, warnings))
                else:
                    warnings.append(f"bare command \\{name} dropped")
            elif i + 1 < len(text) and text[i + 1] in "&%#_{}$":
                out.append(text[i + 1])
                i += 2
            else:
                i += 1
        elif ch in "{}":
            i += 1
        else:
            out.append(ch)
            i += 1
    return _collapse_ws("".join(out))


_MULTI_RE = re.compile(r"\s*\\(multicolumn|multirow)\s*")


def _parse_latex_cell(raw: str, warnings: list[str]) -> _RawCell:
    """Decode an optionally \\multicolumn/\\multirow-wrapped cell."""
    rowspan = 1
    colspan = 1
    text = raw
    for _ in range(2):
        m = _MULTI_RE.match(text)
        if not m:
            break
        kind = m.group(1)
        pos = m.end()
        k_str, pos = _read_braced(text, pos)
        try:
            k = int(k_str.strip())
        except ValueError as exc:
            raise MalformedTableError(f"non-numeric \\{kind} count: {k_str!r}") from exc
        if k > _MAX_SPAN:
            raise SpanOverflowError(f"\\{kind}{{{k}}} exceeds the supported span size")
        _, pos = _read_braced(text, pos)  # alignment spec / width, unused
        rest = text[pos:].lstrip()
        if rest.startswith("{"):
            inner, pos2 = _read_braced(rest, 0)
            trailing = rest[pos2:].strip()
            if trailing:
                warnings.append(f"text after span argument dropped: {trailing!r}")
            text = inner
        else:
            text = rest
        if kind == "multicolumn":
            colspan = max(colspan, k)
        else:
            rowspan = max(rowspan, k)
    return _RawCell(_clean_latex_text(text, warnings), rowspan, colspan)


def parse_latex(source: str) -> ParseReport:
    """Parse a tabular environment; \\multicolumn/\\multirow become MergedRegions."""
    m = _TABULAR_RE.search(source)
    if not m:
        raise MalformedTableError("no tabular environment found")
    colspec, body = m.group(1), m.group(2)
    declared_cols = _count_colspec(colspec)
    warnings: list[str] = []
    body = _RULE_RE.sub(" ", body)
    body = body.replace("\\tabularnewline", "\\\\")
    raw_rows = re.split(r"\\\\(?:\s*\[[^\]]*\])?", body)
    # A trailing \\ before \end{tabular} leaves a blank final segment; interior
    # blank segments are real rows (e.g. fully covered by a \multirow).
    if raw_rows and not raw_rows[-1].strip():
        raw_rows.pop()
    rows: list[list[_RawCell]] = []
    for raw_row in raw_rows:
        cells = [_parse_latex_cell(c, warnings) for c in _split_depth0(raw_row, "&")]
        width = sum(c.colspan for c in cells)
        if declared_cols and width > declared_cols:
            raise SpanOverflowError(
                f"row width {width} exceeds the declared {declared_cols} columns"
            )
        rows.append(cells)
    if not rows:
        raise MalformedTableError("tabular body has no rows")

    # Paint with LaTeX semantics: a continuation cell under an active
    # \multirow is an explicit empty cell and consumes the covered column.
    n_declared = len(rows)
    occupied: dict[tuple[int, int], str] = {}
    merges: list[MergedRegion] = []
    for r0, row in enumerate(rows):
        r = r0 + 1
        c = 1
        for cell in row:
            if (r, c) in occupied and cell.text == "" and cell.rowspan == 1 and cell.colspan == 1:
                c += 1
                continue
            while (r, c) in occupied:
                c += 1
            rowspan = cell.rowspan
            if r + rowspan - 1 > n_declared:
                warnings.append(
                    f"multirow at ({r}, {c}) overflows the table; clamped to row {n_declared}"
                )
                rowspan = n_declared - r + 1
            for dr in range(rowspan):
                for dc in range(cell.colspan):
                    occupied[(r + dr, c + dc)] = cell.text
            if rowspan * cell.colspan >= 2:
                merges.append(
                    MergedRegion(r, r + rowspan - 1, c, c + cell.colspan - 1, cell.text)
                )
            c += cell.colspan
    n_rows = max(r for r, _ in occupied)
    n_cols = max(c for _, c in occupied)
    if declared_cols and n_cols < declared_cols:
        n_cols = declared_cols
    ragged = False
    cells = []
    for r in range(1, n_rows + 1):
        row_cells = []
        for c in range(1, n_cols + 1):
            if (r, c) in occupied:
                row_cells.append(occupied[(r, c)])
            else:
                ragged = True
                row_cells.append("")
        cells.append(row_cells)
    if ragged:
        warnings.append("ragged rows padded with empty cells")
    return ParseReport(TableGrid(cells, merges, "latex"), warnings)


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------

_PARSERS = {"html": parse_html, "markdown": parse_markdown, "latex": parse_latex}


def sniff_format(source: str) -> str | None:
    if re.search(r"<\s*table\b", source, re.IGNORECASE):
        return "html"
    if "\\begin{tabular}" in source:
        return "latex"
    lines = [ln for ln in source.splitlines() if ln.strip()]
    if len(lines) >= 2 and "|" in lines[0] and _DELIM_RE.match(lines[1]):
        return "markdown"
    return None


def parse_auto(source: str, format_hint: str | None = None) -> ParseReport:
    """Dispatch to a format parser; an explicit hint beats sniffing."""
    fmt = format_hint or sniff_format(source)
    if fmt is None:
        raise UnknownFormatError("could not detect table format and no hint given")
    if fmt not in _PARSERS:
        raise UnknownFormatError(f"unsupported format hint: {fmt!r}")
    return _PARSERS[fmt](source)
