import os
import sys

import numpy as np
import pytest

from tcd.adapter_client import AdapterProtocolError, encode_frame, spawn_adapter
from tcd.predictors import PredictorError

FAKE = os.path.join(os.path.dirname(__file__), "fake_adapter.py")


def adapter_cmd(mode):
    return f"{sys.executable} {FAKE} --mode {mode}"


def test_handshake_capabilities():
    client = spawn_adapter(adapter_cmd("echo"))
    try:
        assert client.capabilities == ("semantic",)
    finally:
        client.close()


def test_version_mismatch():
    with pytest.raises(AdapterProtocolError, match="version"):
        spawn_adapter(adapter_cmd("bad-version"))


def test_missing_hello():
    with pytest.raises(PredictorError):
        spawn_adapter(adapter_cmd("no-hello"))


def test_spawn_failure():
    with pytest.raises(PredictorError, match="spawn"):
        spawn_adapter("/nonexistent/adapter-binary")


def test_semantic_round_trip():
    client = spawn_adapter(adapter_cmd("echo"))
    try:
        block = np.zeros((4, 5, 3), np.uint8)
        block[:, :, 1] = 102
        pred = client.predict_semantic(block)
        assert pred.confidence.shape == (4, 5)
        assert pred.confidence == pytest.approx(102 / 255.0)
    finally:
        client.close()


def test_instances_round_trip():
    client = spawn_adapter(adapter_cmd("echo"))
    try:
        out = client.predict_instances(np.zeros((16, 16, 3), np.uint8))
        assert len(out) == 1
        assert out[0].class_name == "tree"
        assert out[0].score == 0.9
    finally:
        client.close()


def test_death_mid_run_then_restart():
    client = spawn_adapter(adapter_cmd("die-after-first"))
    try:
        block = np.zeros((2, 2, 3), np.uint8)
        client.predict_semantic(block)
        with pytest.raises(PredictorError):
            client.predict_semantic(block)
        client.restart()
        pred = client.predict_semantic(block)
        assert pred.confidence.shape == (2, 2)
    finally:
        client.close()


def test_encode_frame_layout():
    frame = encode_frame({"type": "hello", "version": 1}, b"abc")
    import json
    import struct

    (n,) = struct.unpack("<I", frame[:4])
    header = json.loads(frame[4 : 4 + n].decode())
    assert header["payload_len"] == 3
    assert frame[4 + n :] == b"abc"
