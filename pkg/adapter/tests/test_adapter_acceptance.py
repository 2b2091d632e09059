"""Protocol conformance against the primary client (tcd package).

Prints one ``[ACCEPTANCE] ...`` line, mirroring the primary suite.
"""

import struct
import subprocess
import sys
import time

import numpy as np
import pytest

tcd_client = pytest.importorskip("tcd.adapter_client")
tcd_predictors = pytest.importorskip("tcd.predictors")

ADAPTER = f"{sys.executable} -m tcd_adapter.server"


def report(name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    line = f"[ACCEPTANCE] {name}: {status}"
    if detail:
        line += f" ({detail})"
    print(line, file=sys.stderr)
    assert ok, line


def test_protocol_conformance():
    t0 = time.monotonic()
    ok = True
    detail = ""

    # Handshake through the primary client.
    client = tcd_client.spawn_adapter(f"{ADAPTER} --mode greenness")
    try:
        if client.capabilities != ("semantic",):
            ok, detail = False, f"capabilities {client.capabilities}"

        # 1000 random requests, responses id-matched by the client,
        # greenness parity within 1e-6 against the in-process oracle.
        rng = np.random.default_rng(0)
        worst = 0.0
        for i in range(1000):
            h = int(rng.integers(1, 48))
            w = int(rng.integers(1, 48))
            block = rng.integers(0, 256, size=(h, w, 3)).astype(np.uint8)
            pred = client.predict_semantic(block)
            expected = tcd_predictors.greenness_confidence(block)
            diff = float(np.abs(pred.confidence - expected).max())
            worst = max(worst, diff)
            if diff > 1e-6:
                ok, detail = False, f"request {i}: parity {diff}"
                break
    finally:
        client.close()

    # Fuzz: random garbage inside valid length-delimited frames must be
    # answered with error frames; the process must stay alive throughout
    # and still serve a real request afterwards.
    if ok:
        proc = subprocess.Popen(
            [sys.executable, "-m", "tcd_adapter.server", "--mode", "echo_semantic"],
            stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
        )
        try:
            from tcd.adapter_client import encode_frame, read_frame

            hello, _ = read_frame(proc.stdout.fileno(), 10.0)
            rng = np.random.default_rng(1)
            for i in range(200):
                choice = i % 4
                if choice == 0:  # non-JSON header
                    raw = bytes(rng.integers(0, 256, size=int(rng.integers(1, 64))))
                    frame = struct.pack("<I", len(raw)) + raw
                elif choice == 1:  # valid JSON, bogus request
                    frame = encode_frame({"type": "??", "id": int(i)},
                                         bytes(rng.integers(0, 256, size=8)))
                elif choice == 2:  # dims/payload mismatch
                    frame = encode_frame({"type": "predict_semantic", "id": int(i),
                                          "width": 8, "height": 8, "bands": 3,
                                          "dtype": "u8"}, b"\x00" * 7)
                else:  # nonsense field types
                    frame = encode_frame({"type": "predict_semantic", "id": int(i),
                                          "width": "huge", "height": None})
                proc.stdin.write(frame)
                proc.stdin.flush()
                resp, _ = read_frame(proc.stdout.fileno(), 10.0)
                if resp.get("type") != "error":
                    ok, detail = False, f"fuzz {i}: {resp.get('type')}"
                    break
                if proc.poll() is not None:
                    ok, detail = False, f"fuzz {i}: adapter died"
                    break
            if ok:
                block = np.zeros((4, 4, 3), np.uint8)
                block[:, :, 1] = 255
                proc.stdin.write(encode_frame(
                    {"type": "predict_semantic", "id": 9999, "width": 4,
                     "height": 4, "bands": 3, "dtype": "u8"}, block.tobytes()))
                proc.stdin.flush()
                resp, payload = read_frame(proc.stdout.fileno(), 10.0)
                conf = np.frombuffer(payload, "<f4")
                if resp.get("id") != 9999 or not (conf == 1.0).all():
                    ok, detail = False, "post-fuzz request failed"
        finally:
            proc.stdin.close()
            proc.wait(timeout=5)

    elapsed = time.monotonic() - t0
    ok = ok and elapsed < 60.0
    report("protocol-conformance", ok,
           detail or f"1000 requests + 200 fuzz frames in {elapsed:.1f}s")
