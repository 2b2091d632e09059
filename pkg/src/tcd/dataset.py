"""Dataset tooling: biome tagging, license-aware stratified splits,
COCO export and annotation rasterization.

Splits are computed per source orthomosaic so that all tiles of one
source share a single assignment (no train/test leakage).  CC-BY-SA
sources are always forced into the holdout split.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import Polygon, shape

from . import _kernels
from .vectors import polygon_to_geojson

LICENSES = ("CC-BY", "CC-BY-NC", "CC-BY-SA")
HOLDOUT = "holdout"
TRAIN = "train"
CATEGORY_IDS = {"tree": 1, "canopy": 2}


@dataclass
class SourceImageRecord:
    oam_id: str
    license: str
    biome: int = -1
    tile_ids: list = field(default_factory=list)
    footprint: Polygon | None = None
    metadata_url: str = ""

    def __post_init__(self):
        if self.license not in LICENSES:
            raise ValueError(f"unknown license {self.license!r}")
        if not -1 <= self.biome <= 14:
            raise ValueError(f"biome index {self.biome} outside [-1, 14]")

    @classmethod
    def from_json(cls, obj: dict) -> "SourceImageRecord":
        footprint = obj.get("footprint")
        return cls(
            oam_id=obj["oam_id"],
            license=obj["license"],
            biome=int(obj.get("biome", -1)),
            tile_ids=list(obj.get("tile_ids", [])),
            footprint=shape(footprint) if footprint else None,
            metadata_url=obj.get("metadata_url", ""),
        )


def read_metadata_jsonl(path) -> list[SourceImageRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(SourceImageRecord.from_json(json.loads(line)))
    return records


@dataclass
class FoldAssignment:
    """Per-source split: holdout, or a train validation fold in [0, k)."""

    split: dict  # oam_id -> HOLDOUT | TRAIN
    fold: dict  # oam_id -> int, for train sources only
    k: int

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "sources": {
                oam_id: {
                    "split": self.split[oam_id],
                    "fold": self.fold.get(oam_id),
                }
                for oam_id in sorted(self.split)
            },
        }


def assign_biome(footprint: Polygon, biome_polygons: dict) -> int:
    """Biome id with the largest intersection area with the footprint;
    -1 when nothing intersects."""
    best_id, best_area = -1, 0.0
    for biome_id in sorted(biome_polygons):
        area = footprint.intersection(biome_polygons[biome_id]).area
        if area > best_area:
            best_id, best_area = biome_id, area
    return best_id


def _deal_key(seed: int, oam_id: str) -> str:
    return hashlib.sha256(f"{seed}:{oam_id}".encode("utf-8")).hexdigest()


def make_splits(records: list[SourceImageRecord], k: int = 5,
                holdout_frac: float = 0.10, seed: int = 42) -> FoldAssignment:
    """Deterministic biome-stratified split into holdout + k train folds.

    Per biome, sources are ordered by a keyed hash of (seed, oam_id);
    holdout is filled until the biome's holdout tile share reaches
    ``holdout_frac`` (CC-BY-SA sources count first and are always
    holdout), then the remaining sources are dealt round-robin into the k
    folds.  Identical inputs and seed reproduce identical assignments.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    if not 0 < holdout_frac < 1:
        raise ValueError("holdout_frac must be in (0, 1)")
    if len(records) < k:
        raise ValueError(f"need at least k={k} sources, got {len(records)}")
    seen = set()
    for rec in records:
        if rec.oam_id in seen:
            raise ValueError(f"duplicate source {rec.oam_id}")
        seen.add(rec.oam_id)

    split: dict = {}
    fold: dict = {}
    by_biome: dict = {}
    for rec in records:
        by_biome.setdefault(rec.biome, []).append(rec)

    for biome in sorted(by_biome):
        group = sorted(by_biome[biome], key=lambda r: _deal_key(seed, r.oam_id))
        tiles = lambda r: max(len(r.tile_ids), 1)
        total_tiles = sum(tiles(r) for r in group)
        # Integer tile target: a vanishingly small fraction holds out
        # nothing; overshoot is bounded by one source.
        target = math.floor(holdout_frac * total_tiles)

        holdout_tiles = 0
        train_sources = []
        forced = [r for r in group if r.license == "CC-BY-SA"]
        optional = [r for r in group if r.license != "CC-BY-SA"]
        for rec in forced:
            split[rec.oam_id] = HOLDOUT
            holdout_tiles += tiles(rec)
        for rec in optional:
            if holdout_tiles < target:
                split[rec.oam_id] = HOLDOUT
                holdout_tiles += tiles(rec)
            else:
                train_sources.append(rec)

        for i, rec in enumerate(train_sources):
            split[rec.oam_id] = TRAIN
            fold[rec.oam_id] = i % k
    return FoldAssignment(split, fold, k)


def splits_to_json(assignment: FoldAssignment) -> str:
    """Canonical (byte-stable) JSON encoding of a fold assignment."""
    return json.dumps(assignment.to_dict(), sort_keys=True, separators=(",", ":"))


@dataclass
class AnnotationRecord:
    id: int
    tile_id: str
    category: str  # "tree" | "canopy"
    rings: list  # exterior + holes, tile pixel coords

    def __post_init__(self):
        if self.category not in CATEGORY_IDS:
            raise ValueError(f"unknown category {self.category!r}")

    @property
    def iscrowd(self) -> int:
        return 1 if self.category == "canopy" else 0

    def polygon(self) -> Polygon:
        return Polygon(self.rings[0], self.rings[1:])


def export_coco(records: list[SourceImageRecord], annotations: list[AnnotationRecord],
                path, tile_px: int = 2048) -> dict:
    """Write a COCO-format JSON for the given sources' tiles.

    Tiles are the COCO images (fixed 2048 px); canopy annotations carry
    iscrowd=1.  Returns the written document.
    """
    tile_index: dict = {}
    images = []
    for rec in sorted(records, key=lambda r: r.oam_id):
        for tile_id in rec.tile_ids:
            if tile_id in tile_index:
                raise ValueError(f"tile {tile_id} appears in multiple sources")
            tile_index[tile_id] = len(tile_index) + 1
            images.append({
                "id": tile_index[tile_id],
                "file_name": f"{tile_id}.tif",
                "width": tile_px,
                "height": tile_px,
            })
    coco_annotations = []
    for ann in annotations:
        if ann.tile_id not in tile_index:
            raise ValueError(f"annotation {ann.id} references unknown tile {ann.tile_id}")
        poly = ann.polygon()
        minx, miny, maxx, maxy = poly.bounds
        segmentation = [
            [float(v) for xy in ring for v in xy] for ring in ann.rings
        ]
        coco_annotations.append({
            "id": ann.id,
            "image_id": tile_index[ann.tile_id],
            "category_id": CATEGORY_IDS[ann.category],
            "segmentation": segmentation,
            "area": poly.area,
            "bbox": [minx, miny, maxx - minx, maxy - miny],
            "iscrowd": ann.iscrowd,
        })
    doc = {
        "images": images,
        "categories": [
            {"id": 1, "name": "tree"},
            {"id": 2, "name": "canopy"},
        ],
        "annotations": coco_annotations,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
    return doc


def parse_coco(path) -> dict:
    """Minimal independent COCO reader used for round-trip checks and as
    ground-truth input to instance evaluation."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    for key in ("images", "annotations", "categories"):
        if key not in doc:
            raise ValueError(f"not a COCO file: missing {key!r}")
    return doc


def coco_annotation_polygon(ann: dict) -> Polygon:
    rings = []
    for flat in ann["segmentation"]:
        rings.append([(flat[i], flat[i + 1]) for i in range(0, len(flat), 2)])
    return Polygon(rings[0], rings[1:])


def rasterize_annotations(annotations: list[AnnotationRecord],
                          dims: tuple[int, int]) -> np.ndarray:
    """Binary mask of the annotations' union (holes respected, even-odd
    fill, pixel-center rule).  dims is (width, height)."""
    width, height = dims
    out = np.zeros((height, width), dtype=np.uint8)
    for ann in annotations:
        mask = _kernels.rasterize_rings(
            [np.asarray(r, dtype=np.float64) for r in ann.rings], width, height
        )
        np.bitwise_or(out, mask, out=out)
    return out
