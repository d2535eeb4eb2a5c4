"""Orchestrator-side program execution via a runner child process.

Each call spawns one fresh runner, writes a single JSON request to its stdin
and reads a single JSON response from its stdout:

    request:  {"source": str, "timeout_ms": int, "memory_mb": int, "allowlist": [str]}
    response: {"status": str, "stdout": str, "stderr": str, "wall_time_ms": int}

Exit code 0 means the protocol worked regardless of how the program behaved;
anything else is a deployment problem (RunnerUnavailable).  Program
misbehavior never raises here: it is encoded in ExecutionOutcome.status.
"""

from __future__ import annotations

import ast
import importlib.util
import io
import json
import os
import shlex
import subprocess
import sys
import threading
import time
from contextlib import redirect_stderr, redirect_stdout
from dataclasses import dataclass

from .errors import RunnerUnavailable
from .normalize import NormalizedValue, normalize_text

STATUS_OK = "ok"
STATUS_SYNTAX_ERROR = "syntax_error"
STATUS_RUNTIME_ERROR = "runtime_error"
STATUS_TIMEOUT = "timeout"
STATUS_FORBIDDEN_IMPORT = "forbidden_import"
STATUS_RESOURCE_LIMIT = "resource_limit"

STATUSES = frozenset(
    {
        STATUS_OK,
        STATUS_SYNTAX_ERROR,
        STATUS_RUNTIME_ERROR,
        STATUS_TIMEOUT,
        STATUS_FORBIDDEN_IMPORT,
        STATUS_RESOURCE_LIMIT,
    }
)

DEFAULT_ALLOWLIST = frozenset({"math", "fractions", "itertools", "functools"})

# Extra wall time granted on top of timeout_ms before the runner itself is
# presumed wedged and killed (covers interpreter startup and signal delivery).
TIMEOUT_SLACK_MS = 500
_HARD_KILL_MARGIN_MS = 4000

SHIM_ENV_VAR = "MSARL_SHIM_CMD"
_DEFAULT_SHIM_MODULE = "msarl_shim"


@dataclass(frozen=True)
class ExecLimits:
    timeout_ms: int = 5000
    memory_mb: int = 256
    allowlist: frozenset[str] = DEFAULT_ALLOWLIST

    def __post_init__(self):
        if not 100 <= self.timeout_ms <= 60000:
            raise ValueError(f"timeout_ms out of range [100, 60000]: {self.timeout_ms}")
        if not 16 <= self.memory_mb <= 2048:
            raise ValueError(f"memory_mb out of range [16, 2048]: {self.memory_mb}")
        object.__setattr__(self, "allowlist", frozenset(self.allowlist))


@dataclass(frozen=True)
class ExecutionOutcome:
    status: str
    stdout: str
    stderr: str
    wall_time_ms: int

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK


_child_cap = threading.BoundedSemaphore(8)
_child_cap_size = 8
_cap_lock = threading.Lock()


def set_child_cap(n: int) -> None:
    """Bound the number of concurrently running runner children (default 8)."""
    global _child_cap, _child_cap_size
    if n < 1:
        raise ValueError("child cap must be >= 1")
    with _cap_lock:
        _child_cap = threading.BoundedSemaphore(n)
        _child_cap_size = n


def resolve_shim_cmd(shim_cmd: list[str] | None = None) -> list[str]:
    """Pick the runner command: explicit arg, MSARL_SHIM_CMD, or the installed
    msarl_shim module."""
    if shim_cmd:
        return list(shim_cmd)
    env_cmd = os.environ.get(SHIM_ENV_VAR)
    if env_cmd:
        return shlex.split(env_cmd)
    if importlib.util.find_spec(_DEFAULT_SHIM_MODULE) is not None:
        return [sys.executable, "-I", "-m", _DEFAULT_SHIM_MODULE]
    raise RunnerUnavailable(
        "no runner configured: install the msarl-runner-shim package, "
        f"set {SHIM_ENV_VAR}, or pass shim_cmd explicitly"
    )


def execute_program(
    source: str,
    limits: ExecLimits | None = None,
    *,
    shim_cmd: list[str] | None = None,
) -> ExecutionOutcome:
    """Run one program in a fresh runner child and classify the outcome."""
    if not source:
        raise ValueError("source must be non-empty")
    limits = limits or ExecLimits()
    cmd = resolve_shim_cmd(shim_cmd)
    request = json.dumps(
        {
            "source": source,
            "timeout_ms": limits.timeout_ms,
            "memory_mb": limits.memory_mb,
            "allowlist": sorted(limits.allowlist),
        }
    )
    deadline_s = (limits.timeout_ms + TIMEOUT_SLACK_MS + _HARD_KILL_MARGIN_MS) / 1000.0
    with _child_cap:
        start = time.monotonic()
        try:
            proc = subprocess.Popen(
                cmd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
            )
        except OSError as exc:
            raise RunnerUnavailable(f"cannot spawn runner {cmd!r}: {exc}") from exc
        try:
            stdout, stderr = proc.communicate(request, timeout=deadline_s)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()
            # The runner failed to enforce its own limit (e.g. a single huge
            # C-level operation); classify as timeout rather than deployment
            # failure since the program, not the runner, is at fault.
            wall_ms = int((time.monotonic() - start) * 1000)
            return ExecutionOutcome(STATUS_TIMEOUT, "", "wall-clock limit enforced by orchestrator", wall_ms)
    if proc.returncode != 0:
        raise RunnerUnavailable(
            f"runner exited with code {proc.returncode}: {stderr.strip()[:200]}"
        )
    try:
        reply = json.loads(stdout)
        status = reply["status"]
        outcome = ExecutionOutcome(
            status=status,
            stdout=reply["stdout"],
            stderr=reply["stderr"],
            wall_time_ms=int(reply["wall_time_ms"]),
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise RunnerUnavailable(f"runner reply violates the wire protocol: {exc}") from exc
    if outcome.status not in STATUSES:
        raise RunnerUnavailable(f"runner reported unknown status {outcome.status!r}")
    return outcome


def normalize_stdout(raw: str) -> NormalizedValue:
    """Canonicalize captured output for comparison against ground truth."""
    return normalize_text(raw)


def _scan_imports(tree: ast.AST, allowlist: frozenset[str]) -> str | None:
    for node in ast.walk(tree):
        names: list[str] = []
        if isinstance(node, ast.Import):
            names = [alias.name for alias in node.names]
        elif isinstance(node, ast.ImportFrom) and node.module and node.level == 0:
            names = [node.module]
        for name in names:
            if name.split(".")[0] not in allowlist:
                return name
    return None


def execute_inline(source: str, limits: ExecLimits | None = None) -> ExecutionOutcome:
    """In-process executor with the same classification surface.

    No process isolation and no resource enforcement: intended for trusted
    template programs at training scale and as the test double for code paths
    where sandbox behavior is not itself under test.
    """
    if not source:
        raise ValueError("source must be non-empty")
    limits = limits or ExecLimits()
    start = time.monotonic()

    def done(status: str, out: str = "", err: str = "") -> ExecutionOutcome:
        return ExecutionOutcome(status, out, err, int((time.monotonic() - start) * 1000))

    try:
        tree = ast.parse(source)
        code = compile(tree, "<program>", "exec")
    except SyntaxError as exc:
        return done(STATUS_SYNTAX_ERROR, err=str(exc))
    blocked = _scan_imports(tree, limits.allowlist)
    if blocked is not None:
        return done(STATUS_FORBIDDEN_IMPORT, err=f"import of {blocked!r} is not allowed")
    out, err = io.StringIO(), io.StringIO()
    try:
        with redirect_stdout(out), redirect_stderr(err):
            exec(code, {"__name__": "__main__"})
    except MemoryError:
        return done(STATUS_RESOURCE_LIMIT, out.getvalue(), "MemoryError")
    except BaseException as exc:
        return done(STATUS_RUNTIME_ERROR, out.getvalue(), f"{type(exc).__name__}: {exc}")
    return done(STATUS_OK, out.getvalue(), err.getvalue())


def make_sandbox_executor(shim_cmd: list[str] | None = None):
    """Bind execute_program to a fixed runner command."""

    def executor(source: str, limits: ExecLimits | None = None) -> ExecutionOutcome:
        return execute_program(source, limits, shim_cmd=shim_cmd)

    return executor
