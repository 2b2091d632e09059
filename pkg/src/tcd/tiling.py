"""Overlapping tile grid generation and empty-tile detection.

Each tile has a prediction ``window`` and a smaller ``core``: the region
kept when stitching.  Core boundaries sit at the midpoint of the overlap
between neighbouring windows, so interior tiles discard half the overlap
on each side while edge tiles keep their predictions up to the raster
edge.  Cores partition the raster exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .georaster import RasterWindow


@dataclass(frozen=True)
class TileGridSpec:
    raster_width: int
    raster_height: int
    tile_size: int = 1024
    overlap: int = 256

    def __post_init__(self):
        if self.raster_width <= 0 or self.raster_height <= 0:
            raise ValueError("raster dimensions must be positive")
        if self.tile_size <= 0:
            raise ValueError("tile_size must be positive")
        if not 0 <= self.overlap < self.tile_size:
            raise ValueError(
                f"overlap must satisfy 0 <= overlap < tile_size "
                f"(got {self.overlap} vs {self.tile_size})"
            )


@dataclass(frozen=True)
class Tile:
    index: tuple[int, int]
    window: RasterWindow
    core: RasterWindow


def _axis_layout(size: int, tile_size: int, overlap: int):
    """Window starts and core boundaries along one axis.

    Starts advance by ``tile_size - overlap``; the final start is clamped
    so the last window ends at the raster edge.  Core boundaries are the
    midpoints of consecutive windows' overlap (floor keeps them integral,
    giving the leftover pixel of an odd overlap to the earlier tile).
    """
    eff = min(tile_size, size)
    stride = tile_size - overlap
    starts = []
    pos = 0
    while True:
        if pos + eff >= size:
            starts.append(size - eff)
            break
        starts.append(pos)
        pos += stride
    # Dedupe: the clamped last start may coincide with the previous one.
    starts = sorted(set(starts))
    bounds = [0]
    for a, b in zip(starts, starts[1:]):
        bounds.append((b + a + eff) // 2)
    bounds.append(size)
    return starts, eff, bounds


def build_grid(spec: TileGridSpec) -> list[Tile]:
    """Row-major list of tiles covering the raster."""
    xs, tw, xb = _axis_layout(spec.raster_width, spec.tile_size, spec.overlap)
    ys, th, yb = _axis_layout(spec.raster_height, spec.tile_size, spec.overlap)
    tiles = []
    for i, y in enumerate(ys):
        for j, x in enumerate(xs):
            window = RasterWindow(x, y, tw, th)
            core = RasterWindow(xb[j], yb[i], xb[j + 1] - xb[j], yb[i + 1] - yb[i])
            assert window.contains(core)
            tiles.append(Tile((i, j), window, core))
    return tiles


def is_empty_tile(block: np.ndarray, nodata=None) -> bool:
    """True iff every sample is 0, or every sample equals the nodata value."""
    if _kernels.block_all_equal(block, 0):
        return True
    if nodata is not None and _kernels.block_all_equal(block, nodata):
        return True
    return False
