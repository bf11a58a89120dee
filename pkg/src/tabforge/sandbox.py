"""Policed execution of annotation code snippets.

Static screening rejects disallowed imports and dangerous call patterns
before launch; surviving snippets run in an isolated interpreter subprocess
(the runtime harness) with the table pre-bound, a hard timeout, and capped
stdout. Screening is defense in depth, not a security boundary against a
determined adversary; the process isolation and resource limits carry that.
"""

from __future__ import annotations

import ast
import io
import json
import os
import re
import signal
import subprocess
import sys
import tempfile
import time
import tokenize
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .errors import SpawnFailureError
from .grid import TableGrid

DEFAULT_ALLOWED_MODULES = frozenset(
    {
        "math",
        "re",
        "json",
        "collections",
        "itertools",
        "functools",
        "statistics",
        "datetime",
        "decimal",
        "fractions",
        "random",
        "string",
    }
)

_FORBIDDEN_MODULES = {"os", "sys", "subprocess", "socket", "shutil", "pathlib"}

DEFAULT_BANNED_PATTERNS = (
    r"__import__",
    r"\beval\s*\(",
    r"\bexec\s*\(",
    r"\bopen\s*\(",
    r"\bbreakpoint\s*\(",
    r"__builtins__",
    r"__globals__",
    r"__subclasses__",
)

RUNTIME_ENV_VAR = "TABFORGE_RUNTIME"


@dataclass(frozen=True)
class SandboxPolicy:
    allowed_modules: frozenset[str] = DEFAULT_ALLOWED_MODULES
    banned_call_patterns: tuple[str, ...] = DEFAULT_BANNED_PATTERNS
    timeout: float = 10.0
    max_stdout_bytes: int = 64 * 1024

    def __post_init__(self) -> None:
        bad = set(self.allowed_modules) & _FORBIDDEN_MODULES
        if bad:
            raise ValueError(f"policy must never allow: {sorted(bad)}")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


@dataclass(frozen=True)
class ExecResult:
    status: str  # ok | policy_rejected | runtime_error | timeout | empty_output
    stdout: str
    stderr: str
    duration: float
    policy_violations: tuple[str, ...] = ()


def _blank_strings_and_comments(code: str) -> str:
    """Source with string and comment tokens blanked, for pattern matching."""
    lines = code.splitlines(keepends=True)
    starts = [0]
    for ln in lines:
        starts.append(starts[-1] + len(ln))

    def offset(pos: tuple[int, int]) -> int:
        row, col = pos
        return starts[row - 1] + col

    try:
        tokens = list(tokenize.generate_tokens(io.StringIO(code).readline))
    except (tokenize.TokenError, IndentationError, SyntaxError):
        return code  # conservative: match against the raw source
    result = list(code)
    for tok in tokens:
        if tok.type in (tokenize.STRING, tokenize.COMMENT):
            start, end = offset(tok.start), offset(tok.end)
            for i in range(start, min(end, len(result))):
                if result[i] not in "\r\n":
                    result[i] = " "
    return "".join(result)


def _imported_modules(code: str) -> tuple[list[str], list[str]]:
    """(top-level imported module names, parse-level violations)."""
    names: list[str] = []
    violations: list[str] = []
    try:
        tree = ast.parse(code)
    except SyntaxError:
        # Unparseable code cannot run anyway; fall back to a regex scan so a
        # literal banned import is still caught before any launch attempt.
        for m in re.finditer(r"^\s*(?:import|from)\s+([A-Za-z_][\w.]*)", code, re.M):
            names.append(m.group(1).split(".")[0])
        return names, violations
    for node in ast.walk(tree):
        if isinstance(node, ast.Import):
            names.extend(alias.name.split(".")[0] for alias in node.names)
        elif isinstance(node, ast.ImportFrom):
            if node.level:
                violations.append("relative import")
            elif node.module:
                names.append(node.module.split(".")[0])
    return names, violations


def screen(code: str, policy: SandboxPolicy) -> list[str]:
    """Static scan; empty result means pass.

    Every literally imported module must be allowed, and no banned call
    pattern may match outside string literals.
    """
    violations: list[str] = []
    modules, extra = _imported_modules(code)
    violations.extend(extra)
    for name in modules:
        if name not in policy.allowed_modules:
            violations.append(f"import {name}")
    scannable = _blank_strings_and_comments(code)
    for pattern in policy.banned_call_patterns:
        if re.search(pattern, scannable):
            violations.append(f"banned pattern: {pattern}")
    return violations


# ---------------------------------------------------------------------------
# Harness discovery and the parent->child frame
# ---------------------------------------------------------------------------

def resolve_harness() -> list[str] | None:
    """Argv for the runtime harness, or None when the shim is not installed.

    Resolution order: TABFORGE_RUNTIME env var (path to the harness script),
    then the installed ``tabforge_runtime`` package.
    """
    env_path = os.environ.get(RUNTIME_ENV_VAR)
    if env_path:
        return [sys.executable, env_path] if os.path.exists(env_path) else None
    try:
        import importlib.util

        spec = importlib.util.find_spec("tabforge_runtime")
    except (ImportError, ValueError):
        spec = None
    if spec and spec.origin:
        harness = os.path.join(os.path.dirname(spec.origin), "harness.py")
        if os.path.exists(harness):
            return [sys.executable, harness]
    return None


def build_frame(code: str, grid: TableGrid, table_source: str,
                policy: SandboxPolicy) -> str:
    """Single length-prefixed UTF-8 frame: byte length, newline, one-line JSON."""
    payload = json.dumps(
        {
            "allowed_modules": sorted(policy.allowed_modules),
            "grid": grid.to_canonical_text(),
            "table_source": table_source,
            "snippet": code,
        },
        ensure_ascii=False,
    )
    return f"{len(payload.encode('utf-8'))}\n{payload}\n"


def _child_limits(timeout: float):
    def apply() -> None:
        os.setsid()
        try:
            import resource

            cpu = max(2, int(timeout) + 2)
            resource.setrlimit(resource.RLIMIT_CPU, (cpu, cpu))
            resource.setrlimit(resource.RLIMIT_FSIZE, (1 << 20, 1 << 20))
            resource.setrlimit(resource.RLIMIT_CORE, (0, 0))
        except Exception:
            pass

    return apply


def execute(
    code: str,
    grid: TableGrid,
    policy: SandboxPolicy,
    table_source: str = "",
    harness_cmd: list[str] | None = None,
) -> ExecResult:
    """Screen, then run the snippet in one harness subprocess.

    The raw table source is pre-bound in the child as ``html_table`` and the
    canonical grid backs the tool functions; snippets may use either.
    """
    violations = screen(code, policy)
    if violations:
        return ExecResult("policy_rejected", "", "", 0.0, tuple(violations))

    cmd = harness_cmd or resolve_harness()
    if not cmd:
        raise SpawnFailureError(
            "runtime harness not found: install tabforge-runtime or set "
            f"{RUNTIME_ENV_VAR}"
        )
    frame = build_frame(code, grid, table_source, policy)
    env = {
        "PATH": os.environ.get("PATH", "/usr/bin:/bin"),
        "PYTHONIOENCODING": "utf-8",
        "PYTHONDONTWRITEBYTECODE": "1",
    }
    started = time.monotonic()
    with tempfile.TemporaryDirectory(prefix="tabforge-job-") as workdir:
        try:
            proc = subprocess.Popen(
                cmd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                cwd=workdir,
                env=env,
                preexec_fn=_child_limits(policy.timeout),
                text=False,
            )
        except OSError as exc:
            raise SpawnFailureError(f"cannot launch harness {cmd!r}: {exc}") from exc
        timed_out = False
        try:
            out_b, err_b = proc.communicate(frame.encode("utf-8"), timeout=policy.timeout)
        except subprocess.TimeoutExpired:
            timed_out = True
            try:
                os.killpg(proc.pid, signal.SIGKILL)
            except (ProcessLookupError, PermissionError):
                proc.kill()
            out_b, err_b = proc.communicate()
        duration = time.monotonic() - started

    stdout = out_b[: policy.max_stdout_bytes].decode("utf-8", errors="replace")
    stderr = err_b[: policy.max_stdout_bytes].decode("utf-8", errors="replace")
    if timed_out:
        return ExecResult("timeout", stdout, stderr, duration)
    if proc.returncode == 0:
        if stdout.strip():
            return ExecResult("ok", stdout, stderr, duration)
        return ExecResult("empty_output", stdout, stderr, duration)
    if proc.returncode == 4:
        raise SpawnFailureError(f"harness-level failure (exit 4): {stderr[:500]}")
    return ExecResult("runtime_error", stdout, stderr, duration)


def execute_pool(
    jobs: list[tuple[str, TableGrid]],
    policy: SandboxPolicy,
    parallelism: int = 4,
    table_sources: list[str] | None = None,
    harness_cmd: list[str] | None = None,
) -> list[ExecResult]:
    """Positionally aligned results with at most ``parallelism`` live children."""
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    if not jobs:
        return []
    sources = table_sources or [""] * len(jobs)

    def one(idx: int) -> ExecResult:
        code, grid = jobs[idx]
        return execute(code, grid, policy, sources[idx], harness_cmd=harness_cmd)

    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(one, range(len(jobs))))
