"""Client side of the model-adapter subprocess protocol.

Frames are ``u32 little-endian header_length || header (UTF-8 JSON) ||
payload`` where the payload length is declared in the header.  The
adapter announces itself with a hello frame carrying a protocol version
and its task capabilities; each request is answered by exactly one
response frame with a matching id.
"""

from __future__ import annotations

import json
import os
import select
import shlex
import struct
import subprocess
import threading
import time

import numpy as np
from shapely.geometry import Polygon

from .predictors import CANOPY, TREE, InstanceObject, PredictorError, SemanticPrediction, clip_to_tile

PROTOCOL_VERSION = 1
HANDSHAKE_TIMEOUT = 10.0
REQUEST_TIMEOUT = 120.0


class AdapterProtocolError(PredictorError):
    pass


def encode_frame(header: dict, payload: bytes = b"") -> bytes:
    header = dict(header)
    header["payload_len"] = len(payload)
    raw = json.dumps(header).encode("utf-8")
    return struct.pack("<I", len(raw)) + raw + payload


def _read_exact(fd: int, n: int, deadline: float) -> bytes:
    chunks = []
    remaining = n
    while remaining > 0:
        timeout = deadline - time.monotonic()
        if timeout <= 0:
            raise AdapterProtocolError("adapter timed out")
        ready, _, _ = select.select([fd], [], [], timeout)
        if not ready:
            continue
        chunk = os.read(fd, remaining)
        if not chunk:
            raise AdapterProtocolError("adapter closed its output stream")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(fd: int, timeout: float) -> tuple[dict, bytes]:
    deadline = time.monotonic() + timeout
    (header_len,) = struct.unpack("<I", _read_exact(fd, 4, deadline))
    if header_len > 16 * 1024 * 1024:
        raise AdapterProtocolError(f"implausible header length {header_len}")
    try:
        header = json.loads(_read_exact(fd, header_len, deadline).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise AdapterProtocolError(f"malformed frame header: {exc}") from exc
    payload_len = int(header.get("payload_len", 0))
    payload = _read_exact(fd, payload_len, deadline) if payload_len else b""
    return header, payload


class AdapterPredictor:
    """Predictor handle backed by a spawned adapter process.

    One in-flight request per process; calls are serialized with a lock so
    the handle may be shared by a worker pool (the pool gains parallelism
    by spawning several handles instead).
    """

    max_concurrency = 1

    def __init__(self, command: str):
        self.command = command
        self._lock = threading.Lock()
        self._next_id = 0
        self._proc = None
        self.capabilities: tuple = ()
        self._spawn()

    def _spawn(self):
        argv = shlex.split(self.command)
        try:
            self._proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
            )
        except OSError as exc:
            raise PredictorError(f"cannot spawn adapter {argv[0]!r}: {exc}") from exc
        try:
            header, _ = read_frame(self._proc.stdout.fileno(), HANDSHAKE_TIMEOUT)
        except AdapterProtocolError as exc:
            self._kill()
            raise PredictorError(f"adapter handshake failed: {exc}") from exc
        if header.get("type") != "hello":
            self._kill()
            raise AdapterProtocolError(
                f"expected hello frame, got {header.get('type')!r}"
            )
        if header.get("version") != PROTOCOL_VERSION:
            self._kill()
            raise AdapterProtocolError(
                f"adapter protocol version {header.get('version')} "
                f"(client speaks {PROTOCOL_VERSION})"
            )
        self.capabilities = tuple(header.get("capabilities", ()))

    def _kill(self):
        if self._proc is not None:
            self._proc.kill()
            self._proc.wait()

    def _roundtrip(self, header: dict, payload: bytes) -> tuple[dict, bytes]:
        if self._proc is None or self._proc.poll() is not None:
            raise PredictorError("adapter process is not running")
        try:
            self._proc.stdin.write(encode_frame(header, payload))
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise PredictorError(f"adapter write failed: {exc}") from exc
        resp, resp_payload = read_frame(self._proc.stdout.fileno(), REQUEST_TIMEOUT)
        if resp.get("type") == "error":
            raise PredictorError(f"adapter error: {resp.get('message')}")
        if resp.get("id") != header["id"]:
            raise AdapterProtocolError(
                f"response id {resp.get('id')} does not match request {header['id']}"
            )
        return resp, resp_payload

    def predict_semantic(self, block, window=None) -> SemanticPrediction:
        block = np.ascontiguousarray(block, dtype=np.uint8)
        height, width = block.shape[:2]
        with self._lock:
            self._next_id += 1
            req = {
                "type": "predict_semantic",
                "id": self._next_id,
                "width": width,
                "height": height,
                "bands": block.shape[2],
                "dtype": "u8",
            }
            resp, payload = self._roundtrip(req, block.tobytes())
        if resp.get("type") != "semantic_result":
            raise AdapterProtocolError(f"unexpected response type {resp.get('type')!r}")
        if resp.get("width") != width or resp.get("height") != height:
            raise AdapterProtocolError("semantic result dims do not match request")
        if len(payload) != width * height * 4:
            raise AdapterProtocolError("semantic result payload length mismatch")
        conf = np.frombuffer(payload, dtype="<f4").reshape(height, width)
        return SemanticPrediction(width, height, conf.astype(np.float32))

    def predict_instances(self, block, window=None) -> list[InstanceObject]:
        block = np.ascontiguousarray(block, dtype=np.uint8)
        height, width = block.shape[:2]
        with self._lock:
            self._next_id += 1
            req = {
                "type": "predict_instances",
                "id": self._next_id,
                "width": width,
                "height": height,
                "bands": block.shape[2],
                "dtype": "u8",
            }
            resp, _ = self._roundtrip(req, block.tobytes())
        if resp.get("type") != "instance_result":
            raise AdapterProtocolError(f"unexpected response type {resp.get('type')!r}")
        instances = []
        for item in resp.get("instances", []):
            class_name = item.get("class")
            if class_name not in (TREE, CANOPY):
                raise AdapterProtocolError(f"unknown instance class {class_name!r}")
            poly = Polygon(item["polygon"], item.get("holes") or None)
            instances.append(InstanceObject(class_name, float(item["score"]), poly))
        return clip_to_tile(instances, width, height)

    def restart(self):
        """Kill and respawn the process (retry path after a tile failure)."""
        self._kill()
        self._spawn()

    def close(self):
        if self._proc is None:
            return
        try:
            self._proc.stdin.close()
            self._proc.wait(timeout=5)
        except (OSError, subprocess.TimeoutExpired):
            self._kill()
        self._proc = None


def spawn_adapter(command: str) -> AdapterPredictor:
    return AdapterPredictor(command)
