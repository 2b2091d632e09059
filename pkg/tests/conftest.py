import math

import numpy as np
import pytest
from shapely.geometry import Polygon

from tcd.georaster import GeoTransform, MemoryRaster


@pytest.fixture
def world_gt():
    return GeoTransform(500000.0, 200000.0, 0.1, -0.1, 3395)


def make_mask_raster(rng, width, height, geotransform=None):
    """Random binary u8 mask with blobby structure (not pure noise)."""
    mask = (rng.random((height, width)) < 0.4).astype(np.uint8)
    # A few solid rectangles make playback/stitching bugs visible.
    for _ in range(5):
        x = rng.integers(0, max(width - 1, 1))
        y = rng.integers(0, max(height - 1, 1))
        w = rng.integers(1, max(width // 4, 2))
        h = rng.integers(1, max(height // 4, 2))
        mask[y : y + h, x : x + w] = rng.integers(0, 2)
    return MemoryRaster.from_array(mask, geotransform)


def disk_polygon(cx, cy, radius, n=64):
    pts = [
        (cx + radius * math.cos(2 * math.pi * k / n),
         cy + radius * math.sin(2 * math.pi * k / n))
        for k in range(n)
    ]
    return Polygon(pts)


def brute_force_point_in_rings(x, y, rings):
    """Even-odd crossing test, independent of the kernels."""
    inside = False
    for ring in rings:
        pts = [(float(px), float(py)) for px, py in ring]
        if pts[0] == pts[-1]:
            pts = pts[:-1]
        n = len(pts)
        for i in range(n):
            x1, y1 = pts[i]
            x2, y2 = pts[(i + 1) % n]
            if (y1 <= y < y2) or (y2 <= y < y1):
                t = (y - y1) / (y2 - y1)
                if x < x1 + t * (x2 - x1):
                    inside = not inside
    return inside
