"""Instance post-processing: per-tile NMS and boundary filtering, and the
global cross-tile merge (dissolve, umbrella removal, IoU merging).

Tile-level processing is pure and parallel; the global merge is a
sequential fixpoint over an R-tree of world-space geometries.  A
canonical ordering (score descending, then lexicographic bbox) is applied
before merging so the result does not depend on arrival order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from shapely.geometry import Point
from shapely.ops import unary_union

from . import _kernels
from .georaster import GeoTransform, RasterWindow
from .predictors import CANOPY, TREE, InstanceObject
from .spatial import RTree
from .tiling import Tile

BOUNDARY_TOUCH_PX = 0.5


@dataclass
class MergeConfig:
    nms_iou: float = 0.5
    merge_iou: float = 0.5
    confidence_threshold: float = 0.4
    semantic_filter_fraction: float = 0.5

    def __post_init__(self):
        for name in ("nms_iou", "merge_iou", "confidence_threshold",
                     "semantic_filter_fraction"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")


def polygon_iou(a, b) -> float:
    inter = a.intersection(b).area
    if inter == 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def repair_geometry(geom):
    """buffer(0)-style fix for self-intersecting rings; None if hopeless.

    When the repair shatters the ring into several parts, the largest one
    is kept.
    """
    if geom.is_valid:
        return geom if geom.area > 0 else None
    fixed = geom.buffer(0)
    if fixed.is_empty:
        return None
    if fixed.geom_type == "MultiPolygon":
        fixed = max(fixed.geoms, key=lambda g: g.area)
    if fixed.geom_type != "Polygon" or fixed.area <= 0:
        return None
    return fixed


def nms(instances: list[InstanceObject], iou_threshold: float) -> list[InstanceObject]:
    """Greedy per-class non-max suppression by polygon IoU."""
    survivors: list[InstanceObject] = []
    for class_name in (TREE, CANOPY):
        group = sorted(
            (i for i in instances if i.class_name == class_name),
            key=lambda i: (-i.score, i.geometry.bounds),
        )
        kept: list[InstanceObject] = []
        for cand in group:
            if all(polygon_iou(cand.geometry, k.geometry) < iou_threshold for k in kept):
                kept.append(cand)
        survivors.extend(kept)
    return survivors


def _touches_interior_boundary(geom, window: RasterWindow, raster_w, raster_h) -> bool:
    minx, miny, maxx, maxy = geom.bounds
    w, h = window.width, window.height
    if minx < BOUNDARY_TOUCH_PX and window.col_off > 0:
        return True
    if maxx > w - BOUNDARY_TOUCH_PX and window.col_end < raster_w:
        return True
    if miny < BOUNDARY_TOUCH_PX and window.row_off > 0:
        return True
    if maxy > h - BOUNDARY_TOUCH_PX and window.row_end < raster_h:
        return True
    return False


def to_world(geom, window: RasterWindow, gt: GeoTransform):
    """Tile-local pixel coordinates -> world coordinates."""
    from shapely import affinity

    # world_x = origin_x + (col_off + x) * pixel_w, likewise for y.
    return affinity.affine_transform(
        geom,
        [gt.pixel_w, 0, 0, gt.pixel_h,
         gt.origin_x + window.col_off * gt.pixel_w,
         gt.origin_y + window.row_off * gt.pixel_h],
    )


@dataclass
class TileStats:
    dropped_invalid: int = 0
    dropped_boundary: int = 0
    dropped_low_score: int = 0
    suppressed: int = 0


def tile_postprocess(instances, tile: Tile, raster_w, raster_h,
                     gt: GeoTransform, cfg: MergeConfig,
                     stats: TileStats | None = None) -> list[InstanceObject]:
    """Filter, NMS and georeference one tile's instances.

    Tree instances touching an interior tile edge (closer than 0.5 px) are
    dropped; canopy instances are kept regardless.
    """
    stats = stats if stats is not None else TileStats()
    valid = []
    for inst in instances:
        geom = repair_geometry(inst.geometry)
        if geom is None:
            stats.dropped_invalid += 1
            continue
        if inst.score < cfg.confidence_threshold:
            stats.dropped_low_score += 1
            continue
        valid.append(InstanceObject(inst.class_name, inst.score, geom))

    kept = nms(valid, cfg.nms_iou)
    stats.suppressed += len(valid) - len(kept)

    out = []
    for inst in kept:
        if inst.class_name == TREE and _touches_interior_boundary(
            inst.geometry, tile.window, raster_w, raster_h
        ):
            stats.dropped_boundary += 1
            continue
        world = to_world(inst.geometry, tile.window, gt)
        out.append(InstanceObject(inst.class_name, inst.score, world).normalized())
    return out


def _canonical(instances: list[InstanceObject]) -> list[InstanceObject]:
    return sorted(instances, key=lambda i: (-i.score, i.geometry.bounds))


def _clusters(instances: list[InstanceObject]) -> list[list[int]]:
    """Connected components of same-class, positive-area overlap."""
    n = len(instances)
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[rb] = ra

    tree = RTree()
    for i, inst in enumerate(instances):
        tree.insert(i, inst.geometry.bounds)
    for i, inst in enumerate(instances):
        for j in tree.query(inst.geometry.bounds):
            if j <= i or instances[j].class_name != inst.class_name:
                continue
            inter = inst.geometry.intersection(instances[j].geometry)
            if inter.area > 0:
                union(i, j)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


def _merge_cluster_tree(members: list[InstanceObject]) -> tuple[list[InstanceObject], bool]:
    changed = False
    members = list(members)

    # Umbrella removal: a polygon whose interior holds the centroids of two
    # or more other members is considered a spurious covering prediction.
    while True:
        removed = None
        for k, inst in enumerate(members):
            centroids = [
                m.geometry.centroid for idx, m in enumerate(members) if idx != k
            ]
            inside = sum(1 for c in centroids if inst.geometry.contains(c))
            if inside >= 2:
                removed = k
                break
        if removed is None:
            break
        del members[removed]
        changed = True
    return members, changed


def _merge_pairs(members: list[InstanceObject], merge_iou: float):
    changed = False
    while True:
        members = _canonical(members)
        merged = None
        for i in range(len(members)):
            for j in range(i + 1, len(members)):
                if polygon_iou(members[i].geometry, members[j].geometry) >= merge_iou:
                    merged = (i, j)
                    break
            if merged:
                break
        if merged is None:
            return members, changed
        i, j = merged
        a, b = members[i], members[j]
        geom = unary_union([a.geometry, b.geometry])
        inst = InstanceObject(a.class_name, max(a.score, b.score), geom)
        members = [m for k, m in enumerate(members) if k not in (i, j)] + [inst]
        changed = True


def global_merge(instances, cfg: MergeConfig) -> list[InstanceObject]:
    """Merge world-space instances from all tiles into a consistent set.

    Per cluster of overlapping same-class instances: canopy clusters
    dissolve into their union (max score); tree clusters first drop
    "umbrella" polygons containing >= 2 other member centroids, then merge
    pairs with IoU >= merge_iou until none qualify.  The whole procedure
    runs to a fixpoint, which makes it idempotent.
    """
    current = _canonical(list(instances))
    while True:
        changed = False
        result: list[InstanceObject] = []
        for group in _clusters(current):
            members = [current[i] for i in group]
            if len(members) == 1:
                result.extend(members)
                continue
            if members[0].class_name == CANOPY:
                geom = unary_union([m.geometry for m in members])
                score = max(m.score for m in members)
                result.append(InstanceObject(CANOPY, score, geom))
                changed = True
                continue
            members, c1 = _merge_cluster_tree(members)
            members, c2 = _merge_pairs(members, cfg.merge_iou)
            changed = changed or c1 or c2
            result.extend(members)
        current = _canonical(result)
        if not changed:
            return current


def filter_by_semantic(instances, mask_src, fraction: float,
                       instances_crs: int | None = None) -> list[InstanceObject]:
    """Keep instances whose polygon is covered by the binary mask.

    Coverage is (mask=1 pixels inside the polygon) / (pixels inside the
    polygon), both by pixel-center counting; the instance survives iff
    coverage >= fraction.
    """
    gt = mask_src.geotransform
    if instances_crs is not None and instances_crs != gt.crs_code:
        raise ValueError(
            f"CRS mismatch: instances EPSG:{instances_crs} vs mask EPSG:{gt.crs_code}"
        )
    out = []
    for inst in instances:
        rings = []
        for ring in [inst.geometry.exterior, *inst.geometry.interiors]:
            rings.append(np.array(
                [gt.world_to_pixel(x, y) for x, y in ring.coords], dtype=np.float64
            ))
        allpts = np.concatenate(rings)
        c0 = max(0, int(np.floor(allpts[:, 0].min())))
        r0 = max(0, int(np.floor(allpts[:, 1].min())))
        c1 = min(mask_src.width, int(np.ceil(allpts[:, 0].max())) + 1)
        r1 = min(mask_src.height, int(np.ceil(allpts[:, 1].max())) + 1)
        if c1 <= c0 or r1 <= r0:
            if fraction <= 0:
                out.append(inst)
            continue  # no pixel centers can fall inside
        inside = _kernels.rasterize_rings(
            rings, c1 - c0, r1 - r0, origin_col=c0, origin_row=r0
        ).astype(bool)
        total = int(np.count_nonzero(inside))
        if total == 0:
            if fraction <= 0:
                out.append(inst)
            continue
        mask = mask_src.read_window(RasterWindow(c0, r0, c1 - c0, r1 - r0))[:, :, 0]
        covered = int(np.count_nonzero((mask == 1) & inside))
        if covered / total >= fraction:
            out.append(inst)
    return out


def write_vector(instances, path, crs_code: int | None = None) -> int:
    """Stream instances to a GeoJSON FeatureCollection; returns the count."""
    from .vectors import StreamingFeatureWriter

    with StreamingFeatureWriter(path, crs_code) as writer:
        for inst in instances:
            writer.write_instance(inst)
        return writer.count
