"""Guards and limits wrapped around each executed segment.

The sandbox targets accident containment, not adversarial code: a vetted
import allow-list, writes confined to the per-request scratch directory,
no sockets, a data-segment memory ceiling, and a wall-clock alarm. The
allow-list is configuration — override it with a newline-delimited module
list via ``VIZFLOW_WORKER_ALLOWLIST``.
"""

from __future__ import annotations

import builtins
import os
import resource
import signal
from contextlib import contextmanager

SANDBOX_MODULE_NAME = "__sandbox__"

DEFAULT_ALLOWED_MODULES = frozenset({
    "PIL", "numpy", "matplotlib", "mpl_toolkits",
    "math", "cmath", "random", "statistics", "fractions", "decimal",
    "io", "json", "re", "string", "textwrap", "colorsys",
    "itertools", "functools", "collections", "dataclasses", "typing",
    "copy", "enum", "heapq", "bisect", "array", "struct", "time",
})

MEMORY_RESERVE_BYTES = 64 * 1024 * 1024  # slop for allocator bookkeeping


def allowed_modules() -> frozenset[str]:
    override = os.environ.get("VIZFLOW_WORKER_ALLOWLIST")
    if not override:
        return DEFAULT_ALLOWED_MODULES
    with open(override, "r", encoding="utf-8") as fh:
        names = {line.strip() for line in fh if line.strip()
                 and not line.lstrip().startswith("#")}
    return frozenset(names)


class SandboxViolation(Exception):
    pass


class SegmentTimeout(Exception):
    pass


class WriteRecorder:
    """Ordered record of files the segment write-opens under scratch."""

    def __init__(self) -> None:
        self.paths: list[str] = []

    def note(self, path: str) -> None:
        if path not in self.paths:
            self.paths.append(path)


def _current_data_bytes() -> int:
    with open("/proc/self/status", "r", encoding="ascii") as fh:
        for line in fh:
            if line.startswith("VmData:"):
                return int(line.split()[1]) * 1024
    return 0


@contextmanager
def memory_ceiling(limit_mb: int):
    """Cap the data segment at current usage plus the requested headroom."""
    soft = _current_data_bytes() + limit_mb * 1024 * 1024 + MEMORY_RESERVE_BYTES
    _, hard = resource.getrlimit(resource.RLIMIT_DATA)
    previous = resource.getrlimit(resource.RLIMIT_DATA)
    resource.setrlimit(resource.RLIMIT_DATA, (soft, hard))
    try:
        yield
    finally:
        resource.setrlimit(resource.RLIMIT_DATA, previous)


@contextmanager
def wall_clock_alarm(timeout_s: float):
    """Interrupt pure-Python execution at the deadline via SIGALRM.

    Code blocked in native calls cannot be interrupted from inside the
    process; the orchestrator's hard kill at twice the timeout is the
    fallback for that case.
    """
    def handler(signum, frame):
        raise SegmentTimeout(f"segment exceeded {timeout_s:.1f}s")

    previous = signal.signal(signal.SIGALRM, handler)
    signal.setitimer(signal.ITIMER_REAL, timeout_s)
    try:
        yield
    finally:
        signal.setitimer(signal.ITIMER_REAL, 0)
        signal.signal(signal.SIGALRM, previous)


@contextmanager
def guarded_builtins(scratch: str, recorder: WriteRecorder,
                     allowed: frozenset[str]):
    """Patch open and __import__ for the duration of one segment.

    Restrictions apply only to code whose module name is the sandbox
    namespace, so library internals keep working. Writes must stay under
    the scratch directory; imports must come from the allow-list.
    """
    real_open = builtins.open
    real_import = builtins.__import__
    scratch_real = os.path.realpath(scratch)

    def checked_open(file, mode="r", *args, **kwargs):
        writing = isinstance(mode, str) and any(c in mode for c in "wax+")
        if writing and isinstance(file, (str, bytes, os.PathLike)):
            target = os.path.realpath(os.fspath(file))
            if isinstance(target, bytes):
                target = target.decode(errors="surrogateescape")
            if not target.startswith(scratch_real + os.sep) \
                    and target != scratch_real:
                raise SandboxViolation(
                    f"write outside the sandbox scratch directory: {file!r}")
            recorder.note(target)
        return real_open(file, mode, *args, **kwargs)

    def checked_import(name, globals=None, locals=None, fromlist=(), level=0):
        requester = (globals or {}).get("__name__", "")
        if requester == SANDBOX_MODULE_NAME and level == 0:
            top = name.split(".")[0]
            if top not in allowed:
                raise SandboxViolation(
                    f"import of {top!r} is not allowed in the sandbox")
        return real_import(name, globals, locals, fromlist, level)

    builtins.open = checked_open
    builtins.__import__ = checked_import
    try:
        yield
    finally:
        builtins.open = real_open
        builtins.__import__ = real_import
