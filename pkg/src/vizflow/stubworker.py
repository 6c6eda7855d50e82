"""Canned-response protocol stub standing in for the real sandbox worker.

Implements the full frame protocol (handshake, echo, exec) but never runs
code: exec requests get a fixed canned image unless the code carries a
``#STUB:`` marker requesting a scripted behavior. This keeps the primary
pipeline and its tests runnable without the sandbox package.

Markers: SLEEP (never respond), CRASH (die before responding), ERROR
(status error), TWO (two output images), NONE (zero images).
"""

from __future__ import annotations

import argparse
import base64
import io
import os
import struct
import sys
import time

from PIL import Image, ImageDraw

HEADER = struct.Struct(">I")
PROTOCOL_VERSION = 1


def _canned_png() -> bytes:
    img = Image.new("RGB", (640, 480), "white")
    d = ImageDraw.Draw(img)
    d.rectangle([0, 0, 639, 479], outline="black")
    d.ellipse([316, 236, 324, 244], fill="black")
    buf = io.BytesIO()
    img.save(buf, format="PNG", compress_level=6)
    return buf.getvalue()


CANNED = _canned_png()


def _read_exact(stream, n: int) -> bytes | None:
    data = b""
    while len(data) < n:
        chunk = stream.read(n - len(data))
        if not chunk:
            return None
        data += chunk
    return data


def read_frame(stream) -> dict | None:
    import json
    header = _read_exact(stream, HEADER.size)
    if header is None:
        return None
    (length,) = HEADER.unpack(header)
    data = _read_exact(stream, length)
    if data is None:
        return None
    return json.loads(data.decode("utf-8"))


def write_frame(stream, body: dict) -> None:
    import json
    data = json.dumps(body).encode("utf-8")
    stream.write(HEADER.pack(len(data)) + data)
    stream.flush()


def handle_exec(req: dict) -> dict:
    code = req.get("code", "")
    started = time.monotonic()
    if "#STUB:SLEEP" in code:
        time.sleep(600)
    if "#STUB:CRASH" in code:
        os._exit(1)
    b64 = base64.b64encode(CANNED).decode("ascii")
    resp = {"id": req.get("id"), "status": "ok", "images": [b64],
            "stdout": "", "trace": "", "duration_ms": 0}
    if "#STUB:ERROR" in code:
        resp.update(status="error", images=[],
                    trace="Traceback (stub)\nRuntimeError: stub error\n")
    elif "#STUB:TWO" in code:
        resp["images"] = [b64, b64]
    elif "#STUB:NONE" in code:
        resp["images"] = []
    resp["duration_ms"] = int((time.monotonic() - started) * 1000)
    return resp


def serve(version: int) -> int:
    stdin = sys.stdin.buffer
    stdout = sys.stdout.buffer
    try:
        hello = read_frame(stdin)
    except Exception:
        write_frame(stdout, {"status": "protocol_error", "trace": "bad handshake frame"})
        return 1
    if not hello or hello.get("op") != "hello":
        write_frame(stdout, {"status": "protocol_error", "trace": "expected hello"})
        return 1
    write_frame(stdout, {"op": "hello", "protocol_version": version})
    while True:
        try:
            req = read_frame(stdin)
        except Exception as exc:
            write_frame(stdout, {"status": "protocol_error", "trace": str(exc)})
            return 1
        if req is None:
            return 0
        op = req.get("op")
        if op == "echo":
            write_frame(stdout, {"id": req.get("id"), "op": "echo",
                                 "payload": req.get("payload", {})})
        elif op == "exec":
            write_frame(stdout, handle_exec(req))
        else:
            write_frame(stdout, {"id": req.get("id"), "status": "protocol_error",
                                 "trace": f"unknown op {op!r}"})
            return 1


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="canned sandbox protocol stub")
    parser.add_argument("--protocol-version", type=int, default=PROTOCOL_VERSION)
    args = parser.parse_args(argv)
    return serve(args.protocol_version)


if __name__ == "__main__":
    raise SystemExit(main())
