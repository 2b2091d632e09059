"""Predictor contracts and the built-in oracle predictors.

A predictor turns a u8 RGB tile block into either a confidence grid
(semantic task) or a list of scored polygons (instance task).  The
built-ins are deterministic and need no model weights; external models
attach through the adapter subprocess protocol (see ``adapter_client``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import Polygon, box
from shapely.geometry.polygon import orient

from .georaster import RasterSource, RasterWindow

TREE = "tree"
CANOPY = "canopy"


class PredictorError(RuntimeError):
    """A predictor failed on a tile (process death, protocol violation...)."""


@dataclass
class SemanticPrediction:
    width: int
    height: int
    confidence: np.ndarray  # (height, width) float32 in [0, 1]

    def __post_init__(self):
        if self.confidence.shape != (self.height, self.width):
            raise ValueError("confidence grid does not match declared dims")
        if self.confidence.size and (
            float(self.confidence.min()) < 0.0 or float(self.confidence.max()) > 1.0
        ):
            raise ValueError("confidence values outside [0, 1]")


@dataclass
class InstanceObject:
    class_name: str  # TREE or CANOPY
    score: float
    geometry: Polygon

    def __post_init__(self):
        if self.class_name not in (TREE, CANOPY):
            raise ValueError(f"unknown class {self.class_name!r}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")

    def normalized(self) -> "InstanceObject":
        """Exterior ring counter-clockwise, holes clockwise."""
        return InstanceObject(self.class_name, self.score, orient(self.geometry, 1.0))


@dataclass
class PredictorDescriptor:
    kind: str
    params: dict = field(default_factory=dict)

    KINDS = ("greenness", "constant", "playback_semantic", "playback_instance", "adapter")

    @classmethod
    def parse(cls, text: str) -> "PredictorDescriptor":
        """Parse CLI descriptors like ``greenness``, ``constant:0.5``,
        ``playback:mask.tif``, ``playback-instance:truth.geojson`` or
        ``adapter:tcd-adapter --mode greenness``."""
        kind, _, arg = text.partition(":")
        kind = kind.strip()
        if kind == "greenness":
            return cls("greenness")
        if kind == "constant":
            return cls("constant", {"value": float(arg) if arg else 0.0})
        if kind == "playback":
            if not arg:
                raise ValueError("playback descriptor needs a ground-truth path")
            return cls("playback_semantic", {"path": arg})
        if kind == "playback-instance":
            if not arg:
                raise ValueError("playback-instance descriptor needs a vector path")
            return cls("playback_instance", {"path": arg})
        if kind == "adapter":
            if not arg:
                raise ValueError("adapter descriptor needs a command line")
            return cls("adapter", {"command": arg})
        raise ValueError(f"unknown predictor kind {kind!r}")


def greenness_confidence(block: np.ndarray) -> np.ndarray:
    """Excess-green oracle: clamp((2G - R - B) / 510 + 0.5, 0, 1)."""
    b = block.astype(np.float32)
    conf = (2.0 * b[:, :, 1] - b[:, :, 0] - b[:, :, 2]) / np.float32(510.0) + np.float32(0.5)
    return np.clip(conf, 0.0, 1.0).astype(np.float32)


class GreennessPredictor:
    capabilities = ("semantic",)
    max_concurrency = 0  # unbounded

    def predict_semantic(self, block, window=None) -> SemanticPrediction:
        conf = greenness_confidence(block)
        return SemanticPrediction(block.shape[1], block.shape[0], conf)

    def close(self):
        pass


class ConstantPredictor:
    """Uniform confidence for semantic; no detections for instances."""

    capabilities = ("semantic", "instance")
    max_concurrency = 0

    def __init__(self, value: float = 0.0):
        if not 0.0 <= value <= 1.0:
            raise ValueError("constant value must be in [0, 1]")
        self.value = np.float32(value)

    def predict_semantic(self, block, window=None) -> SemanticPrediction:
        conf = np.full(block.shape[:2], self.value, dtype=np.float32)
        return SemanticPrediction(block.shape[1], block.shape[0], conf)

    def predict_instances(self, block, window=None) -> list[InstanceObject]:
        return []

    def close(self):
        pass


class PlaybackSemanticPredictor:
    """Replays a ground-truth raster: confidence is the exact crop.

    u8 masks map to {0.0, 1.0}; f32 rasters are passed through.  Needs the
    tile window to know which crop to return.
    """

    capabilities = ("semantic",)
    max_concurrency = 0

    def __init__(self, truth: RasterSource):
        self.truth = truth

    def predict_semantic(self, block, window: RasterWindow = None) -> SemanticPrediction:
        if window is None:
            raise PredictorError("playback predictor requires the tile window")
        crop = self.truth.read_window(window)[:, :, 0]
        if crop.dtype == np.float32:
            conf = crop
        else:
            conf = (crop != 0).astype(np.float32)
        return SemanticPrediction(window.width, window.height, conf)

    def close(self):
        pass


class PlaybackInstancePredictor:
    """Replays ground-truth polygons (raster pixel space), clipped per tile."""

    capabilities = ("instance",)
    max_concurrency = 0

    def __init__(self, truth: list[tuple[str, Polygon]], score: float = 1.0):
        self.truth = truth
        self.score = score

    def predict_instances(self, block, window: RasterWindow = None) -> list[InstanceObject]:
        if window is None:
            raise PredictorError("playback predictor requires the tile window")
        tile_box = box(window.col_off, window.row_off, window.col_end, window.row_end)
        out = []
        for class_name, poly in self.truth:
            clipped = poly.intersection(tile_box)
            if clipped.is_empty:
                continue
            geoms = getattr(clipped, "geoms", [clipped])
            for geom in geoms:
                if geom.geom_type != "Polygon" or geom.area <= 0:
                    continue
                local = _translate(geom, -window.col_off, -window.row_off)
                out.append(InstanceObject(class_name, self.score, local).normalized())
        return out

    def close(self):
        pass


def _translate(poly: Polygon, dx: float, dy: float) -> Polygon:
    shell = [(x + dx, y + dy) for x, y in poly.exterior.coords]
    holes = [[(x + dx, y + dy) for x, y in ring.coords] for ring in poly.interiors]
    return Polygon(shell, holes)


def clip_to_tile(instances, width, height, tol=1e-9):
    """Clip instance geometries to the tile extent [0,w]x[0,h]."""
    tile_box = box(-tol, -tol, width + tol, height + tol)
    out = []
    for inst in instances:
        if tile_box.contains(inst.geometry):
            out.append(inst)
            continue
        clipped = inst.geometry.intersection(box(0, 0, width, height))
        for geom in getattr(clipped, "geoms", [clipped]):
            if geom.geom_type == "Polygon" and geom.area > 0:
                out.append(InstanceObject(inst.class_name, inst.score, geom).normalized())
    return out


def build_predictor(desc: PredictorDescriptor):
    """Instantiate a predictor from a descriptor (opens files / spawns
    adapter processes as needed)."""
    if desc.kind == "greenness":
        return GreennessPredictor()
    if desc.kind == "constant":
        return ConstantPredictor(desc.params.get("value", 0.0))
    if desc.kind == "playback_semantic":
        from .geotiff import open_raster

        return PlaybackSemanticPredictor(open_raster(desc.params["path"]))
    if desc.kind == "playback_instance":
        from .vectors import read_instances

        truth = [(inst.class_name, inst.geometry)
                 for inst in read_instances(desc.params["path"])]
        return PlaybackInstancePredictor(truth)
    if desc.kind == "adapter":
        from .adapter_client import spawn_adapter

        return spawn_adapter(desc.params["command"])
    raise ValueError(f"unknown predictor kind {desc.kind!r}")
