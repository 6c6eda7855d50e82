"""Length-prefixed JSON frames over binary streams.

Wire format: 4-byte big-endian length, then a UTF-8 JSON object. This is
the worker's only interface; the orchestrating side implements the same
framing independently.
"""

from __future__ import annotations

import json
import struct
from typing import BinaryIO

HEADER = struct.Struct(">I")
MAX_FRAME_BYTES = 64 * 1024 * 1024


class ProtocolViolation(Exception):
    pass


def read_exact(stream: BinaryIO, n: int) -> bytes | None:
    """Read exactly n bytes; None on clean end of stream at a boundary."""
    data = b""
    while len(data) < n:
        chunk = stream.read(n - len(data))
        if not chunk:
            if not data:
                return None
            raise ProtocolViolation("stream closed mid-frame")
        data += chunk
    return data


def read_frame(stream: BinaryIO) -> dict | None:
    header = read_exact(stream, HEADER.size)
    if header is None:
        return None
    (length,) = HEADER.unpack(header)
    if length > MAX_FRAME_BYTES:
        raise ProtocolViolation(f"frame of {length} bytes exceeds limit")
    data = read_exact(stream, length)
    if data is None:
        raise ProtocolViolation("stream closed before frame body")
    try:
        body = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolViolation(f"undecodable frame body: {exc}") from exc
    if not isinstance(body, dict):
        raise ProtocolViolation("frame body is not an object")
    return body


def write_frame(stream: BinaryIO, body: dict) -> None:
    data = json.dumps(body, ensure_ascii=False).encode("utf-8")
    stream.write(HEADER.pack(len(data)) + data)
    stream.flush()
