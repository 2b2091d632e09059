"""Wire framing for the model adapter protocol (version 1).

A frame is ``u32 little-endian header_length || header || payload``.
The header is UTF-8 JSON and declares the payload length in its
``payload_len`` member.  This module is deliberately standalone: the
adapter talks to its peer only through these bytes.
"""

from __future__ import annotations

import json
import struct

PROTOCOL_VERSION = 1
MAX_HEADER_LEN = 16 * 1024 * 1024


class FrameError(Exception):
    """Unrecoverable framing problem (stream out of sync or truncated)."""


class HeaderError(Exception):
    """The frame was delimited correctly but its header is unusable."""


def encode_frame(header: dict, payload: bytes = b"") -> bytes:
    header = dict(header)
    header["payload_len"] = len(payload)
    raw = json.dumps(header).encode("utf-8")
    return struct.pack("<I", len(raw)) + raw + payload


def write_frame(stream, header: dict, payload: bytes = b"") -> None:
    stream.write(encode_frame(header, payload))
    stream.flush()


def _read_exact(stream, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining > 0:
        chunk = stream.read(remaining)
        if not chunk:
            raise EOFError(f"stream closed with {remaining} of {n} bytes pending")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(stream):
    """Read one frame; returns (header, payload) or None on clean EOF.

    Raises HeaderError when the header bytes are not valid JSON (the
    caller can answer with an error frame and keep serving) and
    FrameError when the stream itself is unusable.
    """
    head = stream.read(4)
    if not head:
        return None
    if len(head) < 4:
        raise FrameError("truncated frame length prefix")
    (header_len,) = struct.unpack("<I", head)
    if header_len > MAX_HEADER_LEN:
        raise FrameError(f"implausible header length {header_len}")
    try:
        raw = _read_exact(stream, header_len)
    except EOFError as exc:
        raise FrameError(f"header underrun: {exc}") from exc
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderError(f"malformed frame header: {exc}") from exc
    if not isinstance(header, dict):
        raise HeaderError("frame header is not a JSON object")
    try:
        payload_len = int(header.get("payload_len", 0))
    except (TypeError, ValueError) as exc:
        raise HeaderError(f"bad payload_len: {header.get('payload_len')!r}") from exc
    if payload_len < 0:
        raise HeaderError(f"bad payload_len: {payload_len}")
    try:
        payload = _read_exact(stream, payload_len) if payload_len else b""
    except EOFError as exc:
        raise FrameError(f"payload underrun: {exc}") from exc
    return header, payload
