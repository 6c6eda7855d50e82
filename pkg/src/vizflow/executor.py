"""Sandbox pool client: sends code plus input images to worker processes.

Workers are subprocesses speaking a length-prefixed JSON frame protocol
over stdin/stdout (4-byte big-endian length, UTF-8 JSON body). Images
travel as base64 PNG. One request is in flight per worker; parallelism
comes from pool size. A request is retried at most once, and only when
its worker died before responding — code errors and timeouts are signal,
not noise, for the rollout loop.
"""

from __future__ import annotations

import base64
import itertools
import json
import logging
import os
import queue
import select
import signal
import struct
import subprocess
import threading
import time
import uuid
from dataclasses import dataclass, field

from .datamodel import ImageRef, ImageStore

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
HEADER = struct.Struct(">I")
MAX_FRAME_BYTES = 64 * 1024 * 1024
HANDSHAKE_TIMEOUT_S = 15.0
DEADLINE_GUARD_S = 0.05  # hard kill strictly before 2x timeout

DEFAULT_TIMEOUT_MS = 10_000
DEFAULT_MEMORY_MB = 512


class ExecutorError(Exception):
    pass


class HandshakeError(ExecutorError):
    pass


class ProtocolError(ExecutorError):
    """Worker sent a frame we cannot interpret; the worker is recycled."""


class PoolExhaustedError(ExecutorError):
    pass


class RenderError(ExecutorError):
    pass


@dataclass
class ExecutionRequest:
    """One code segment to run against optional named input images."""

    code: str
    input_images: list[tuple[str, ImageRef]] = field(default_factory=list)
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    memory_limit_mb: int = DEFAULT_MEMORY_MB
    allow_network: bool = False  # fixed False in this artifact
    id: str = ""

    def __post_init__(self) -> None:
        if not self.id:
            self.id = f"x{uuid.uuid4().hex[:12]}"
        for name, _ in self.input_images:
            if not name.isidentifier():
                raise ExecutorError(f"binding name {name!r} is not a valid identifier")
        if self.allow_network:
            raise ExecutorError("network access is always disabled in this artifact")


@dataclass
class ExecutionResult:
    id: str
    status: str  # ok | error | timeout | killed
    output_images: list[ImageRef] = field(default_factory=list)
    stdout: str = ""
    trace: str = ""
    duration_ms: int = 0


# --- framing ----------------------------------------------------------------

def write_frame(fd: int, body: dict) -> None:
    data = json.dumps(body, ensure_ascii=False).encode("utf-8")
    os.write(fd, HEADER.pack(len(data)) + data)


class _FrameReader:
    """Deadline-aware exact reads over a raw pipe fd with a private buffer."""

    def __init__(self, fd: int):
        self.fd = fd
        self.buf = b""

    def _read_exact(self, n: int, deadline: float | None) -> bytes:
        while len(self.buf) < n:
            if deadline is not None:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise TimeoutError("frame read deadline exceeded")
                ready, _, _ = select.select([self.fd], [], [], remaining)
                if not ready:
                    raise TimeoutError("frame read deadline exceeded")
            chunk = os.read(self.fd, 65536)
            if not chunk:
                raise EOFError("worker closed its output stream")
            self.buf += chunk
        out, self.buf = self.buf[:n], self.buf[n:]
        return out

    def read_frame(self, deadline: float | None = None) -> dict:
        header = self._read_exact(HEADER.size, deadline)
        (length,) = HEADER.unpack(header)
        if length > MAX_FRAME_BYTES:
            raise ProtocolError(f"frame of {length} bytes exceeds limit")
        data = self._read_exact(length, deadline)
        try:
            body = json.loads(data.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ProtocolError(f"undecodable frame: {exc}") from exc
        if not isinstance(body, dict):
            raise ProtocolError("frame body is not an object")
        return body


# --- worker handle ------------------------------------------------------------

class WorkerHandle:
    """One sandbox subprocess; single request in flight at a time."""

    _seq = itertools.count(1)

    def __init__(self, cmd: list[str], stderr_path: str | None = None):
        self.index = next(self._seq)
        self.cmd = list(cmd)
        stderr = subprocess.DEVNULL if stderr_path is None else open(stderr_path, "ab")
        self.proc = subprocess.Popen(
            self.cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            stderr=stderr, start_new_session=True,
        )
        assert self.proc.stdin is not None and self.proc.stdout is not None
        self._in_fd = self.proc.stdin.fileno()
        self._reader = _FrameReader(self.proc.stdout.fileno())
        self._handshake()

    def _handshake(self) -> None:
        deadline = time.monotonic() + HANDSHAKE_TIMEOUT_S
        try:
            write_frame(self._in_fd, {"op": "hello", "protocol_version": PROTOCOL_VERSION})
            reply = self._reader.read_frame(deadline)
        except (OSError, EOFError, TimeoutError, ProtocolError) as exc:
            self.kill()
            raise HandshakeError(f"worker handshake failed: {exc}") from exc
        if reply.get("op") != "hello" or reply.get("protocol_version") != PROTOCOL_VERSION:
            self.kill()
            raise HandshakeError(f"protocol version mismatch: {reply}")

    def alive(self) -> bool:
        return self.proc.poll() is None

    def request(self, body: dict, deadline: float | None) -> dict:
        write_frame(self._in_fd, body)
        return self._reader.read_frame(deadline)

    def echo(self, payload: dict, timeout_s: float = 5.0) -> dict:
        reply = self.request({"id": f"h{uuid.uuid4().hex[:8]}", "op": "echo",
                              "payload": payload}, time.monotonic() + timeout_s)
        return reply.get("payload", {})

    def kill(self) -> None:
        if self.proc.poll() is None:
            try:
                os.killpg(os.getpgid(self.proc.pid), signal.SIGKILL)
            except (ProcessLookupError, PermissionError):
                self.proc.kill()
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            pass
        for stream in (self.proc.stdin, self.proc.stdout):
            try:
                if stream:
                    stream.close()
            except OSError:
                pass


class WorkerPool:
    """Fixed-size pool; safe for concurrent submitters."""

    def __init__(self, cmd: list[str], size: int, store: ImageStore,
                 queue_cap: int = 64, stderr_dir: str | None = None):
        if size < 1:
            raise ExecutorError("pool needs at least one worker")
        self.cmd = list(cmd)
        self.size = size
        self.store = store
        self.stderr_dir = stderr_dir
        self._idle: queue.Queue[WorkerHandle] = queue.Queue()
        self._pending = threading.Semaphore(size + queue_cap)
        self._workers: list[WorkerHandle] = []
        self._lock = threading.Lock()
        self._closed = False
        for _ in range(size):
            self._add_worker()

    def _spawn(self) -> WorkerHandle:
        stderr_path = None
        if self.stderr_dir:
            os.makedirs(self.stderr_dir, exist_ok=True)
            stderr_path = os.path.join(self.stderr_dir, f"worker-{uuid.uuid4().hex[:8]}.log")
        return WorkerHandle(self.cmd, stderr_path)

    def _add_worker(self) -> None:
        handle = self._spawn()
        with self._lock:
            self._workers.append(handle)
        self._idle.put(handle)

    def _retire(self, handle: WorkerHandle) -> None:
        handle.kill()
        with self._lock:
            if handle in self._workers:
                self._workers.remove(handle)
        if not self._closed:
            try:
                self._add_worker()
            except ExecutorError as exc:
                log.error("failed to replace worker: %s", exc)

    def workers(self) -> list[WorkerHandle]:
        with self._lock:
            return list(self._workers)

    def health(self) -> list[dict]:
        """Echo-probe every worker; dead or unresponsive workers are reported."""
        report = []
        for handle in self.workers():
            status = "dead"
            if handle.alive():
                try:
                    nonce = uuid.uuid4().hex
                    if self._probe(handle, nonce):
                        status = "ok"
                    else:
                        status = "bad-echo"
                except (OSError, EOFError, TimeoutError, ProtocolError):
                    status = "unresponsive"
            report.append({"worker": handle.index, "pid": handle.proc.pid, "status": status})
        return report

    def _probe(self, handle: WorkerHandle, nonce: str) -> bool:
        # borrow the worker from the idle queue so probes don't race requests
        borrowed: list[WorkerHandle] = []
        target = None
        try:
            while True:
                w = self._idle.get(timeout=5.0)
                if w is handle:
                    target = w
                    break
                borrowed.append(w)
        except queue.Empty:
            for w in borrowed:
                self._idle.put(w)
            return False
        for w in borrowed:
            self._idle.put(w)
        try:
            return target.echo({"nonce": nonce}).get("nonce") == nonce
        finally:
            self._idle.put(target)

    def execute(self, request: ExecutionRequest) -> ExecutionResult:
        """Run one request, retrying once only if the worker died mid-flight."""
        if self._closed:
            raise ExecutorError("pool is closed")
        if not self._pending.acquire(blocking=False):
            raise PoolExhaustedError("pool queue cap reached")
        try:
            result = self._execute_once(request)
            if result is None:  # worker died before responding
                log.warning("worker died during request %s; retrying on a fresh worker",
                            request.id)
                result = self._execute_once(request)
                if result is None:
                    return ExecutionResult(id=request.id, status="killed",
                                           trace="worker terminated unexpectedly twice")
            return result
        finally:
            self._pending.release()

    def _execute_once(self, request: ExecutionRequest) -> ExecutionResult | None:
        images = [{"name": name, "b64": base64.b64encode(self.store.get(ref)).decode("ascii")}
                  for name, ref in request.input_images]
        body = {
            "id": request.id,
            "op": "exec",
            "code": request.code,
            "images": images,
            "timeout_ms": request.timeout_ms,
            "mem_mb": request.memory_limit_mb,
        }
        handle = self._idle.get()
        started = time.monotonic()
        deadline = started + 2.0 * (request.timeout_ms / 1000.0) - DEADLINE_GUARD_S
        try:
            reply = handle.request(body, deadline)
        except TimeoutError:
            elapsed = int((time.monotonic() - started) * 1000)
            self._retire(handle)
            return ExecutionResult(id=request.id, status="timeout",
                                   trace="hard kill at deadline", duration_ms=elapsed)
        except (OSError, EOFError):
            self._retire(handle)
            return None
        except ProtocolError as exc:
            self._retire(handle)
            raise ProtocolError(f"request {request.id}: {exc}") from exc
        self._idle.put(handle)
        if reply.get("id") != request.id:
            self._retire(handle)
            raise ProtocolError(f"response id {reply.get('id')!r} != request id {request.id!r}")
        refs = []
        for b64 in reply.get("images", []):
            refs.append(self.store.put(base64.b64decode(b64)))
        return ExecutionResult(
            id=request.id,
            status=reply.get("status", "error"),
            output_images=refs,
            stdout=reply.get("stdout", ""),
            trace=reply.get("trace", ""),
            duration_ms=int(reply.get("duration_ms", 0)),
        )

    def close(self) -> None:
        self._closed = True
        for handle in self.workers():
            handle.kill()
        with self._lock:
            self._workers.clear()

    def __enter__(self) -> "WorkerPool":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


def pool_spawn(cmd: list[str], size: int, store: ImageStore, **kwargs) -> WorkerPool:
    return WorkerPool(cmd, size, store, **kwargs)


def pool_health(pool: WorkerPool) -> list[dict]:
    return pool.health()


def execute(request: ExecutionRequest, pool: WorkerPool) -> ExecutionResult:
    return pool.execute(request)


def render_original(code: str, pool: WorkerPool,
                    timeout_ms: int = DEFAULT_TIMEOUT_MS) -> ImageRef:
    """Render figure code that must save exactly one image."""
    result = pool.execute(ExecutionRequest(code=code, timeout_ms=timeout_ms))
    if result.status != "ok":
        raise RenderError(f"render failed with status {result.status}: "
                          f"{result.trace.strip()[:300]}")
    if len(result.output_images) != 1:
        raise RenderError(f"render saved {len(result.output_images)} images, expected 1")
    return result.output_images[0]


def default_worker_cmd() -> list[str]:
    """Prefer the real sandbox worker when installed, else the canned stub."""
    import importlib.util
    import sys
    if importlib.util.find_spec("vizflow_worker") is not None:
        return [sys.executable, "-m", "vizflow_worker",
                "--protocol-version", str(PROTOCOL_VERSION)]
    return [sys.executable, "-m", "vizflow.stubworker",
            "--protocol-version", str(PROTOCOL_VERSION)]


def stub_worker_cmd() -> list[str]:
    import sys
    return [sys.executable, "-m", "vizflow.stubworker",
            "--protocol-version", str(PROTOCOL_VERSION)]
