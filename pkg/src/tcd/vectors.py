"""GeoJSON reading and streamed writing for instances, ROIs and points.

Outputs are FeatureCollections with a top-level legacy ``crs`` member
naming the EPSG code (a deliberate deviation from GeoJSON-2016, so that
projected pixel-derived coordinates stay round-trippable).
"""

from __future__ import annotations

import json
import os

from shapely.geometry import MultiPolygon, Polygon, shape

from .predictors import InstanceObject


def _crs_member(crs_code: int) -> dict:
    return {"type": "name", "properties": {"name": f"EPSG:{crs_code}"}}


def parse_crs(obj: dict) -> int | None:
    crs = obj.get("crs")
    if not crs:
        return None
    name = crs.get("properties", {}).get("name", "")
    for prefix in ("EPSG:", "urn:ogc:def:crs:EPSG::"):
        if name.startswith(prefix):
            try:
                return int(name[len(prefix):])
            except ValueError:
                return None
    return None


def _feature_geometry(feature: dict):
    geom = feature.get("geometry")
    if geom is None:
        return None
    return shape(geom)


def read_instances(path) -> list[InstanceObject]:
    """Read predicted or ground-truth instances from a GeoJSON file."""
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    out = []
    for feature in obj.get("features", []):
        geom = _feature_geometry(feature)
        if geom is None:
            continue
        props = feature.get("properties") or {}
        class_name = props.get("class", "tree")
        score = float(props.get("score", 1.0))
        polys = geom.geoms if isinstance(geom, MultiPolygon) else [geom]
        for poly in polys:
            if isinstance(poly, Polygon) and poly.area > 0:
                out.append(InstanceObject(class_name, score, poly))
    return out


def read_polygons(path) -> list[Polygon]:
    """Read plain polygons (e.g. an ROI) from GeoJSON."""
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    polys = []
    features = obj.get("features", [obj]) if obj.get("type") == "FeatureCollection" else [obj]
    for feature in features:
        geom = _feature_geometry(feature) if "geometry" in feature else shape(feature)
        if geom is None:
            continue
        if isinstance(geom, Polygon):
            polys.append(geom)
        elif isinstance(geom, MultiPolygon):
            polys.extend(geom.geoms)
    return polys


def read_points(path) -> list[tuple[float, float]]:
    """Read keypoints (Point features) from GeoJSON."""
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    points = []
    for feature in obj.get("features", []):
        geom = feature.get("geometry") or {}
        if geom.get("type") == "Point":
            x, y = geom["coordinates"][:2]
            points.append((float(x), float(y)))
        elif geom.get("type") == "MultiPoint":
            points.extend((float(x), float(y)) for x, y in geom["coordinates"])
    return points


def polygon_to_geojson(poly) -> dict:
    if isinstance(poly, MultiPolygon):
        return {
            "type": "MultiPolygon",
            "coordinates": [_poly_coords(p) for p in poly.geoms],
        }
    return {"type": "Polygon", "coordinates": _poly_coords(poly)}


def _poly_coords(poly: Polygon):
    rings = [list(map(list, poly.exterior.coords))]
    rings.extend(list(map(list, ring.coords)) for ring in poly.interiors)
    return rings


class StreamingFeatureWriter:
    """Incremental FeatureCollection writer.

    The closing bracket is rewritten after every feature, so the file on
    disk is valid JSON at each whole-feature boundary even if the process
    dies mid-run.
    """

    _FOOTER = "]}"

    def __init__(self, path, crs_code: int | None = None):
        self.path = os.fspath(path)
        self.count = 0
        self._fh = open(self.path, "w", encoding="utf-8")
        head = {"type": "FeatureCollection"}
        if crs_code is not None:
            head["crs"] = _crs_member(crs_code)
        prefix = json.dumps(head)[:-1].rstrip() + ","
        self._fh.write(prefix + ' "features": [')
        self._fh.write(self._FOOTER)
        self._fh.flush()

    def write_feature(self, feature: dict) -> None:
        self._fh.seek(self._fh.tell() - len(self._FOOTER))
        sep = ", " if self.count else ""
        self._fh.write(sep + json.dumps(feature) + self._FOOTER)
        self._fh.flush()
        self.count += 1

    def write_instance(self, inst: InstanceObject) -> None:
        self.write_feature(
            {
                "type": "Feature",
                "properties": {"class": inst.class_name, "score": inst.score},
                "geometry": polygon_to_geojson(inst.geometry),
            }
        )

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
