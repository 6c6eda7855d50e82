"""The worker loop: decode a request, run one code segment, reply.

Segments execute in-process in a fresh namespace with guards installed
(see sandboxing). Nothing persists between requests: each gets its own
scratch directory, namespace, and limits; drawing state is torn down
afterwards. Rendering is headless with a fixed DPI so identical code on
identical inputs produces identical bytes on any worker.
"""

from __future__ import annotations

import base64
import glob
import io
import os
import shutil
import sys
import tempfile
import time
import traceback
from contextlib import redirect_stderr, redirect_stdout

from . import PROTOCOL_VERSION
from .protocol import ProtocolViolation, read_frame, write_frame
from .sandboxing import (SANDBOX_MODULE_NAME, SandboxViolation, SegmentTimeout,
                         WriteRecorder, allowed_modules, guarded_builtins,
                         memory_ceiling, wall_clock_alarm)

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp")
PNG_COMPRESS_LEVEL = 6

_mpl_ready = False


def prepare_rendering() -> None:
    """Force headless, fixed-DPI rendering once, before any segment runs."""
    global _mpl_ready
    if _mpl_ready:
        return
    os.environ.setdefault("MPLBACKEND", "Agg")
    os.environ.setdefault("MPLCONFIGDIR", tempfile.mkdtemp(prefix="mplcfg-"))
    try:
        import matplotlib
        matplotlib.use("Agg", force=True)
        matplotlib.rcParams["figure.dpi"] = 100
        matplotlib.rcParams["savefig.dpi"] = 100
        import matplotlib.pyplot  # noqa: F401  (warm the cache)
    except ImportError:
        pass
    try:
        import numpy  # noqa: F401
    except ImportError:
        pass
    import PIL.Image  # noqa: F401
    import PIL.ImageDraw  # noqa: F401
    import PIL.ImageFont  # noqa: F401
    _mpl_ready = True


def _reset_rendering() -> None:
    if "matplotlib" in sys.modules:
        import matplotlib
        import matplotlib.pyplot as plt
        plt.close("all")
        matplotlib.rcParams["figure.dpi"] = 100
        matplotlib.rcParams["savefig.dpi"] = 100


def canonical_png(data_or_image) -> bytes:
    """Re-encode to metadata-free RGB PNG with a fixed compression level."""
    from PIL import Image
    img = (Image.open(io.BytesIO(data_or_image))
           if isinstance(data_or_image, (bytes, bytearray)) else data_or_image)
    rgb = img.convert("RGB")
    clean = Image.frombytes("RGB", rgb.size, rgb.tobytes())
    out = io.BytesIO()
    clean.save(out, format="PNG", compress_level=PNG_COMPRESS_LEVEL)
    return out.getvalue()


def _collect_images(scratch: str, recorder: WriteRecorder,
                    input_paths: set[str]) -> list[bytes]:
    """Saved images in save order: write-open order first, then any
    stragglers written by other means, oldest first."""
    ordered = [p for p in recorder.paths
               if p.lower().endswith(IMAGE_EXTENSIONS) and os.path.exists(p)]
    seen = set(ordered)
    stragglers = []
    for path in glob.glob(os.path.join(scratch, "**", "*"), recursive=True):
        real = os.path.realpath(path)
        if (real in seen or real in input_paths or not os.path.isfile(real)
                or not real.lower().endswith(IMAGE_EXTENSIONS)):
            continue
        stragglers.append(real)
    stragglers.sort(key=lambda p: (os.stat(p).st_mtime_ns, p))
    images: list[bytes] = []
    for path in ordered + stragglers:
        try:
            images.append(canonical_png(open(path, "rb").read()))
        except Exception:
            continue  # non-decodable leftovers are not outputs
    return images


def run_segment(request: dict) -> dict:
    """Execute one code segment under guards; never raises."""
    prepare_rendering()
    started = time.monotonic()
    req_id = request.get("id")
    code = request.get("code", "")
    timeout_s = max(0.001, int(request.get("timeout_ms", 10_000)) / 1000.0)
    mem_mb = int(request.get("mem_mb", 512))

    scratch = tempfile.mkdtemp(prefix="seg-")
    scratch_real = os.path.realpath(scratch)
    stdout = io.StringIO()
    stderr = io.StringIO()
    recorder = WriteRecorder()
    status, trace = "ok", ""
    input_paths: set[str] = set()
    cwd = os.getcwd()
    try:
        for image in request.get("images", []):
            name = str(image.get("name", ""))
            if not name.isidentifier():
                raise ProtocolViolation(f"binding name {name!r} is not an identifier")
            path = os.path.join(scratch_real, f"{name}.png")
            with open(path, "wb") as fh:
                fh.write(base64.b64decode(image.get("b64", "")))
            input_paths.add(os.path.realpath(path))

        namespace = {"__name__": SANDBOX_MODULE_NAME, "__builtins__": __builtins__}
        os.chdir(scratch_real)
        try:
            with guarded_builtins(scratch_real, recorder, allowed_modules()), \
                    memory_ceiling(mem_mb), wall_clock_alarm(timeout_s), \
                    redirect_stdout(stdout), redirect_stderr(stderr):
                exec(compile(code, "<segment>", "exec"), namespace)
        except SegmentTimeout as exc:
            status, trace = "timeout", f"{exc}\n"
        except MemoryError:
            status, trace = "killed", "MemoryError: segment exceeded its memory ceiling\n"
        except SandboxViolation as exc:
            status, trace = "error", f"SandboxViolation: {exc}\n"
        except BaseException:
            status, trace = "error", traceback.format_exc(limit=20)
        finally:
            os.chdir(cwd)
            _reset_rendering()

        images = [] if status != "ok" else _collect_images(scratch_real, recorder,
                                                           input_paths)
        if status == "error" and not images:
            images = []
        return {
            "id": req_id,
            "status": status,
            "images": [base64.b64encode(b).decode("ascii") for b in images],
            "stdout": stdout.getvalue(),
            "trace": trace if status != "ok" else stderr.getvalue(),
            "duration_ms": int((time.monotonic() - started) * 1000),
        }
    finally:
        shutil.rmtree(scratch, ignore_errors=True)


def serve(version: int, stdin=None, stdout_stream=None) -> int:
    """Frame loop: hello handshake, then echo/exec until the stream closes."""
    stdin = stdin or sys.stdin.buffer
    out = stdout_stream or sys.stdout.buffer
    try:
        hello = read_frame(stdin)
    except ProtocolViolation as exc:
        write_frame(out, {"status": "protocol_error", "trace": str(exc)})
        return 1
    if hello is None or hello.get("op") != "hello":
        write_frame(out, {"status": "protocol_error",
                          "trace": "expected a hello frame"})
        return 1
    write_frame(out, {"op": "hello", "protocol_version": version})
    if version != PROTOCOL_VERSION:
        return 2  # replied with our claimed version; refuse to serve it

    prepare_rendering()
    while True:
        try:
            request = read_frame(stdin)
        except ProtocolViolation as exc:
            write_frame(out, {"status": "protocol_error", "trace": str(exc)})
            return 1
        if request is None:
            return 0
        op = request.get("op")
        if op == "echo":
            write_frame(out, {"id": request.get("id"), "op": "echo",
                              "payload": request.get("payload", {})})
        elif op == "exec":
            try:
                write_frame(out, run_segment(request))
            except ProtocolViolation as exc:
                write_frame(out, {"id": request.get("id"),
                                  "status": "protocol_error", "trace": str(exc)})
                return 1
        else:
            write_frame(out, {"id": request.get("id"), "status": "protocol_error",
                              "trace": f"unknown op {op!r}"})
            return 1
