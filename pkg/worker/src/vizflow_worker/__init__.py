"""Sandbox worker: one code segment at a time, over stdio frames."""

__version__ = "0.1.0"

PROTOCOL_VERSION = 1
