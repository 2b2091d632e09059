"""Serve loop for the reference adapter.

Speaks protocol version 1 on stdin/stdout: emits a hello frame, then
answers requests strictly sequentially until stdin closes.  Bad frames
are answered with error frames; the process only exits on EOF (or an
unrecoverable stream desync, after a final error frame).

Modes
-----
echo_semantic   confidence = green channel / 255
greenness       clip((2G - R - B) / 510 + 0.5, 0, 1) in float32
playback        treats the input tile itself as a mask: band 0 != 0 -> 1.0
neural          optional wrapper around a transformers segmentation model
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .protocol import (
    PROTOCOL_VERSION,
    FrameError,
    HeaderError,
    read_frame,
    write_frame,
)

MODES = ("echo_semantic", "greenness", "playback", "neural")


def echo_confidence(block: np.ndarray) -> np.ndarray:
    return (block[:, :, 1].astype(np.float32) / np.float32(255.0))


def greenness_confidence(block: np.ndarray) -> np.ndarray:
    b = block.astype(np.float32)
    conf = (np.float32(2.0) * b[:, :, 1] - b[:, :, 0] - b[:, :, 2]) \
        / np.float32(510.0) + np.float32(0.5)
    return np.clip(conf, 0.0, 1.0).astype(np.float32)


def playback_confidence(block: np.ndarray) -> np.ndarray:
    return (block[:, :, 0] != 0).astype(np.float32)


class NeuralModel:
    """Thin wrapper around a transformers semantic-segmentation checkpoint.

    Loads lazily on the first request; any import or inference failure is
    reported to the peer as an error frame rather than killing the server.
    """

    def __init__(self, model_id: str, positive_label: int = 1):
        self.model_id = model_id
        self.positive_label = positive_label
        self._pipe = None

    def __call__(self, block: np.ndarray) -> np.ndarray:
        if self._pipe is None:
            import torch
            from transformers import (
                AutoImageProcessor,
                AutoModelForSemanticSegmentation,
            )

            processor = AutoImageProcessor.from_pretrained(self.model_id)
            model = AutoModelForSemanticSegmentation.from_pretrained(self.model_id)
            model.eval()

            def run(img):
                inputs = processor(images=img, return_tensors="pt")
                with torch.no_grad():
                    logits = model(**inputs).logits
                probs = torch.softmax(logits, dim=1)[0, self.positive_label]
                probs = torch.nn.functional.interpolate(
                    probs[None, None], size=img.shape[:2], mode="bilinear",
                    align_corners=False,
                )[0, 0]
                return probs.numpy().astype(np.float32)

            self._pipe = run
        return self._pipe(block)


def _decode_block(header: dict, payload: bytes) -> np.ndarray:
    width = int(header["width"])
    height = int(header["height"])
    bands = int(header.get("bands", 3))
    if width <= 0 or height <= 0 or bands <= 0:
        raise ValueError(f"bad tile dims {width}x{height}x{bands}")
    if header.get("dtype", "u8") != "u8":
        raise ValueError(f"unsupported tile dtype {header.get('dtype')!r}")
    expected = width * height * bands
    if len(payload) != expected:
        raise ValueError(
            f"payload length {len(payload)} != {expected} for "
            f"{width}x{height}x{bands}"
        )
    block = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, bands)
    if bands < 3:
        block = np.repeat(block[:, :, :1], 3, axis=2)
    return block


def serve(mode: str, stdin, stdout, model_id: str | None = None) -> int:
    if mode == "echo_semantic":
        predict = echo_confidence
    elif mode == "greenness":
        predict = greenness_confidence
    elif mode == "playback":
        predict = playback_confidence
    elif mode == "neural":
        if not model_id:
            raise SystemExit("neural mode requires --model")
        predict = NeuralModel(model_id)
    else:
        raise SystemExit(f"unknown mode {mode!r}")

    write_frame(stdout, {
        "type": "hello",
        "version": PROTOCOL_VERSION,
        "capabilities": ["semantic"],
        "mode": mode,
    })

    while True:
        try:
            frame = read_frame(stdin)
        except HeaderError as exc:
            # Delimiting survived; report and keep serving.
            write_frame(stdout, {"type": "error", "id": None, "message": str(exc)})
            continue
        except FrameError as exc:
            write_frame(stdout, {"type": "error", "id": None, "message": str(exc)})
            return 1
        if frame is None:
            return 0
        header, payload = frame
        req_id = header.get("id")
        req_type = header.get("type")
        if req_type != "predict_semantic":
            write_frame(stdout, {
                "type": "error", "id": req_id,
                "message": f"unsupported request type {req_type!r}",
            })
            continue
        try:
            block = _decode_block(header, payload)
            conf = np.ascontiguousarray(predict(block), dtype="<f4")
        except Exception as exc:  # answer, never die
            write_frame(stdout, {
                "type": "error", "id": req_id, "message": str(exc),
            })
            continue
        write_frame(stdout, {
            "type": "semantic_result",
            "id": req_id,
            "width": block.shape[1],
            "height": block.shape[0],
            "dtype": "f32",
        }, conf.tobytes())


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="tcd-adapter",
        description="Reference model adapter (stdin/stdout protocol v1)",
    )
    parser.add_argument("--mode", choices=MODES, default="greenness")
    parser.add_argument("--model", default=None,
                        help="model checkpoint id/path for --mode neural")
    args = parser.parse_args(argv)
    return serve(args.mode, sys.stdin.buffer, sys.stdout.buffer, args.model)


if __name__ == "__main__":
    sys.exit(main())
