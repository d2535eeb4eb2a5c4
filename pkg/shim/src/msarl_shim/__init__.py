"""Restricted in-interpreter program runner.

Speaks a one-shot wire protocol as a child process: exactly one JSON request
object on stdin

    {"source": str, "timeout_ms": int, "memory_mb": int, "allowlist": [str]}

and exactly one JSON response object on stdout

    {"status": str, "stdout": str, "stderr": str, "wall_time_ms": int}

with status one of ok / syntax_error / runtime_error / timeout /
forbidden_import / resource_limit.  Exit code 0 means the protocol worked
regardless of how the program behaved; protocol failures exit nonzero with a
diagnostic on stderr.

Enforcement is defense in depth for model-generated arithmetic code, not a
security boundary against a determined adversary: a static import scan plus a
runtime import gate honor the allowlist, dangerous builtins (open, input, ...)
are removed, a wall-clock alarm and CPU rlimit bound runtime, and the address
space is capped where the platform supports it.
"""

from __future__ import annotations

import ast
import builtins
import importlib
import io
import json
import os
import signal
import sys
import time

STATUS_OK = "ok"
STATUS_SYNTAX_ERROR = "syntax_error"
STATUS_RUNTIME_ERROR = "runtime_error"
STATUS_TIMEOUT = "timeout"
STATUS_FORBIDDEN_IMPORT = "forbidden_import"
STATUS_RESOURCE_LIMIT = "resource_limit"

OUTPUT_CAP_CHARS = 1 << 20  # per stream; overflow truncates
TRUNCATION_MARK = "[truncated]"

MEMORY_NOTE = "memory-limit-unenforced"

_REMOVED_BUILTINS = ("open", "input", "breakpoint", "exit", "quit", "help")


class ProtocolError(Exception):
    """The request itself is unusable; the caller sees a nonzero exit."""


class _ForbiddenImport(ImportError):
    pass


class _WallTimeout(Exception):
    pass


class _CappedWriter(io.TextIOBase):
    def __init__(self, cap: int = OUTPUT_CAP_CHARS):
        self._chunks: list[str] = []
        self._remaining = cap
        self._overflowed = False

    def writable(self) -> bool:
        return True

    def write(self, s: str) -> int:
        if self._remaining > 0:
            kept = s[: self._remaining]
            self._chunks.append(kept)
            self._remaining -= len(kept)
            if len(kept) < len(s):
                self._overflowed = True
        elif s:
            self._overflowed = True
        return len(s)

    def value(self) -> str:
        text = "".join(self._chunks)
        return text + TRUNCATION_MARK if self._overflowed else text


def parse_request(raw: str):
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"request is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ProtocolError("request must be a JSON object")
    try:
        source = data["source"]
        timeout_ms = int(data["timeout_ms"])
        memory_mb = int(data["memory_mb"])
        allowlist = frozenset(str(name) for name in data["allowlist"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"request field missing or mistyped: {exc}") from exc
    if not isinstance(source, str) or not source:
        raise ProtocolError("source must be a non-empty string")
    if timeout_ms < 1 or memory_mb < 1:
        raise ProtocolError("timeout_ms and memory_mb must be positive")
    return source, timeout_ms, memory_mb, allowlist


def scan_imports(tree: ast.AST, allowlist: frozenset[str]) -> str | None:
    """First statically visible import outside the allowlist, if any."""
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


def _preload(allowlist: frozenset[str]) -> None:
    # Allowed modules import their own dependencies before the gate exists.
    for name in sorted(allowlist):
        try:
            importlib.import_module(name)
        except Exception:
            pass  # unknown allowlist entries fail at program import time


def _make_import_gate(allowlist: frozenset[str]):
    real_import = builtins.__import__

    def gate(name, globals=None, locals=None, fromlist=(), level=0):
        if level == 0 and name.split(".")[0] not in allowlist:
            raise _ForbiddenImport(f"import of {name!r} is not allowed")
        return real_import(name, globals, locals, fromlist, level)

    return gate


def _restricted_builtins(allowlist: frozenset[str]) -> dict:
    table = dict(vars(builtins))
    for name in _REMOVED_BUILTINS:
        table.pop(name, None)
    table["__import__"] = _make_import_gate(allowlist)
    return table


def _apply_memory_limit(memory_mb: int) -> tuple[str | None, tuple | None]:
    """Cap address space at current usage plus the requested headroom.

    Returns (note, previous-limit) where note is set when the platform cannot
    enforce the ceiling.
    """
    try:
        import resource

        page_size = os.sysconf("SC_PAGE_SIZE")
        with open_statm() as fh:
            pages = int(fh.read().split()[0])
        current = pages * page_size
        previous = resource.getrlimit(resource.RLIMIT_AS)
        ceiling = current + memory_mb * 1024 * 1024
        if previous[1] != resource.RLIM_INFINITY:
            ceiling = min(ceiling, previous[1])
        resource.setrlimit(resource.RLIMIT_AS, (ceiling, previous[1]))
        return None, previous
    except Exception:
        return MEMORY_NOTE, None


def open_statm():
    # Separated for monkeypatching in tests of the unenforced path.
    return open("/proc/self/statm", "r", encoding="ascii")


def _restore_memory_limit(previous: tuple | None) -> None:
    if previous is None:
        return
    try:
        import resource

        resource.setrlimit(resource.RLIMIT_AS, previous)
    except Exception:
        pass


def _apply_cpu_limit(timeout_ms: int) -> None:
    try:
        import resource

        seconds = max(1, timeout_ms // 1000 + 1)
        soft, hard = resource.getrlimit(resource.RLIMIT_CPU)
        cap = seconds if hard == resource.RLIM_INFINITY else min(seconds, hard)
        resource.setrlimit(resource.RLIMIT_CPU, (cap, hard))
    except Exception:
        pass  # wall-clock alarm still bounds runtime


def run_request(request: dict | str) -> dict:
    """Execute one request and classify the outcome; never raises for
    program misbehavior."""
    if isinstance(request, dict):
        request = json.dumps(request)
    source, timeout_ms, memory_mb, allowlist = parse_request(request)

    def response(status: str, stdout: str = "", stderr: str = "", wall_ms: int = 0) -> dict:
        return {
            "status": status,
            "stdout": stdout,
            "stderr": stderr,
            "wall_time_ms": int(wall_ms),
        }

    try:
        tree = ast.parse(source)
        code = compile(tree, "<program>", "exec")
    except SyntaxError as exc:
        return response(STATUS_SYNTAX_ERROR, stderr=f"SyntaxError: {exc}")

    blocked = scan_imports(tree, allowlist)
    if blocked is not None:
        return response(STATUS_FORBIDDEN_IMPORT, stderr=f"import of {blocked!r} is not allowed")

    _preload(allowlist)
    _apply_cpu_limit(timeout_ms)
    memory_note, previous_limit = _apply_memory_limit(memory_mb)

    out, err = _CappedWriter(), _CappedWriter()
    if memory_note:
        err.write(memory_note + "\n")
    program_globals = {
        "__name__": "__main__",
        "__builtins__": _restricted_builtins(allowlist),
    }

    def on_alarm(signum, frame):
        raise _WallTimeout()

    status = STATUS_OK
    old_stdout, old_stderr = sys.stdout, sys.stderr
    old_handler = signal.signal(signal.SIGALRM, on_alarm)
    signal.setitimer(signal.ITIMER_REAL, timeout_ms / 1000.0)
    start = time.monotonic()
    try:
        sys.stdout, sys.stderr = out, err
        try:
            exec(code, program_globals)
        except _WallTimeout:
            status = STATUS_TIMEOUT
        except _ForbiddenImport as exc:
            status = STATUS_FORBIDDEN_IMPORT
            err.write(str(exc))
        except MemoryError:
            status = STATUS_RESOURCE_LIMIT
            err.write("MemoryError: program exceeded its memory ceiling")
        except BaseException as exc:
            status = STATUS_RUNTIME_ERROR
            err.write(f"{type(exc).__name__}: {exc}")
    finally:
        wall_ms = (time.monotonic() - start) * 1000.0
        signal.setitimer(signal.ITIMER_REAL, 0.0)
        signal.signal(signal.SIGALRM, old_handler)
        sys.stdout, sys.stderr = old_stdout, old_stderr
        _restore_memory_limit(previous_limit)

    return response(status, out.value(), err.value(), wall_ms)
