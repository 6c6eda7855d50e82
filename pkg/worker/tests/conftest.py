from __future__ import annotations

import base64
import io
import json
import struct
import subprocess
import sys

import pytest
from PIL import Image

HEADER = struct.Struct(">I")
WORKER_CMD = [sys.executable, "-m", "vizflow_worker"]


class WorkerClient:
    """Minimal frame-protocol client; the worker's only interface."""

    def __init__(self, protocol_version: int = 1, handshake: bool = True):
        self.proc = subprocess.Popen(
            WORKER_CMD + ["--protocol-version", str(protocol_version)],
            stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL)
        if handshake:
            self.send({"op": "hello", "protocol_version": 1})
            reply = self.recv()
            assert reply == {"op": "hello", "protocol_version": protocol_version}

    def send(self, body: dict) -> None:
        data = json.dumps(body).encode()
        self.proc.stdin.write(HEADER.pack(len(data)) + data)
        self.proc.stdin.flush()

    def send_raw(self, data: bytes) -> None:
        self.proc.stdin.write(data)
        self.proc.stdin.flush()

    def recv(self, timeout: float = 30.0) -> dict | None:
        header = self.proc.stdout.read(HEADER.size)
        if not header:
            return None
        (length,) = HEADER.unpack(header)
        return json.loads(self.proc.stdout.read(length).decode())

    def exec(self, code: str, images: list[tuple[str, bytes]] = (),
             timeout_ms: int = 10_000, mem_mb: int = 256) -> dict:
        self.send({
            "id": "t1",
            "op": "exec",
            "code": code,
            "images": [{"name": name, "b64": base64.b64encode(data).decode()}
                       for name, data in images],
            "timeout_ms": timeout_ms,
            "mem_mb": mem_mb,
        })
        return self.recv()

    def close(self) -> int:
        if self.proc.stdin and not self.proc.stdin.closed:
            self.proc.stdin.close()
        return self.proc.wait(timeout=15)

    def kill(self) -> None:
        self.proc.kill()
        self.proc.wait(timeout=15)


@pytest.fixture
def worker():
    client = WorkerClient()
    yield client
    client.kill()


def png_bytes(size=(64, 48), color="white") -> bytes:
    buf = io.BytesIO()
    Image.new("RGB", size, color).save(buf, format="PNG")
    return buf.getvalue()


def decode_image(b64: str) -> Image.Image:
    return Image.open(io.BytesIO(base64.b64decode(b64)))
