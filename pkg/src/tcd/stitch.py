"""Semantic stitching: tile-wise prediction assembled into a seamless
confidence raster, plus thresholding and canopy-cover summaries.

Each tile contributes exactly its core region to the output, so every
output pixel is written once and results are identical for any worker
count or batch size.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .georaster import DTYPES, RasterWindow, check_window, iter_block_windows
from .predictors import PredictorError
from .tiling import Tile, TileGridSpec, build_grid, is_empty_tile


@dataclass
class StitchConfig:
    tile_size: int = 1024
    overlap: int = 256
    batch_size: int = 4
    skip_empty: bool = True
    threshold: float = 0.5
    workers: int = 1
    nodata_skip: bool = False  # skipped tiles emit nodata instead of 0

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must be in [0, 1]")
        if self.batch_size < 1 or self.workers < 1:
            raise ValueError("batch_size and workers must be >= 1")


@dataclass
class RunSummary:
    tiles_total: int = 0
    tiles_processed: int = 0
    tiles_skipped: int = 0
    tiles_failed: int = 0
    failed_tiles: list = field(default_factory=list)
    elapsed_s: float = 0.0

    def to_dict(self) -> dict:
        return {
            "tiles_total": self.tiles_total,
            "tiles_processed": self.tiles_processed,
            "tiles_skipped": self.tiles_skipped,
            "tiles_failed": self.tiles_failed,
            "failed_tiles": self.failed_tiles,
            "elapsed_s": self.elapsed_s,
        }


def _core_slice(tile: Tile, grid_h, grid_w):
    r0 = tile.core.row_off - tile.window.row_off
    c0 = tile.core.col_off - tile.window.col_off
    return slice(r0, r0 + tile.core.height), slice(c0, c0 + tile.core.width)


def _predict_tile(src, predictor, cfg: StitchConfig, tile: Tile, fill_value):
    """Returns (status, core_block); status in {'ok', 'skipped', 'failed'}."""
    block = src.read_window(tile.window)
    if cfg.skip_empty and is_empty_tile(block, src.nodata):
        return "skipped", None
    rs, cs = _core_slice(tile, None, None)
    try:
        pred = predictor.predict_semantic(block, window=tile.window)
    except PredictorError:
        restart = getattr(predictor, "restart", None)
        if restart is not None:
            try:
                restart()
            except PredictorError:
                return "failed", None
        else:
            return "failed", None
        try:
            pred = predictor.predict_semantic(block, window=tile.window)
        except PredictorError:
            return "failed", None
    del block
    core = np.ascontiguousarray(pred.confidence[rs, cs])
    return "ok", core


def stitch_semantic(src, predictor, cfg: StitchConfig, sink) -> RunSummary:
    """Run semantic prediction over the tile grid and write core regions.

    Every output pixel is written exactly once; skipped-empty and failed
    tiles have their cores filled with 0 (or nodata with ``nodata_skip``),
    with failures additionally recorded in the summary.
    """
    if (sink.width, sink.height) != (src.width, src.height):
        raise ValueError("sink dimensions must equal source dimensions")
    if sink.band_count != 1 or sink.dtype != "f32":
        raise ValueError("semantic sink must be 1-band f32")
    t0 = time.monotonic()
    grid = build_grid(TileGridSpec(src.width, src.height, cfg.tile_size, cfg.overlap))
    summary = RunSummary(tiles_total=len(grid))
    fill_value = np.float32(sink.nodata) if (cfg.nodata_skip and sink.nodata is not None) else np.float32(0.0)

    def handle(result, tile: Tile):
        status, core = result
        if status == "ok":
            sink.write_window(tile.core, core[:, :, np.newaxis])
            summary.tiles_processed += 1
            return
        fill = np.full((tile.core.height, tile.core.width, 1), fill_value, dtype=np.float32)
        sink.write_window(tile.core, fill)
        if status == "skipped":
            summary.tiles_skipped += 1
        else:
            summary.tiles_failed += 1
            summary.failed_tiles.append(list(tile.index))

    if cfg.workers == 1:
        for tile in grid:
            handle(_predict_tile(src, predictor, cfg, tile, fill_value), tile)
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            for start in range(0, len(grid), cfg.batch_size):
                batch = grid[start : start + cfg.batch_size]
                futures = [
                    pool.submit(_predict_tile, src, predictor, cfg, tile, fill_value)
                    for tile in batch
                ]
                for future, tile in zip(futures, batch):
                    handle(future.result(), tile)
    summary.elapsed_s = time.monotonic() - t0
    return summary


def binarize(conf_src, threshold: float, sink) -> None:
    """Threshold a confidence raster into a u8 {0,1} mask (>= convention)."""
    if conf_src.band_count != 1 or conf_src.dtype != "f32":
        raise ValueError("binarize expects a 1-band f32 confidence raster")
    for window in iter_block_windows(conf_src):
        conf = conf_src.read_window(window)
        mask = (conf >= np.float32(threshold)).astype(np.uint8)
        sink.write_window(window, mask)


def roi_to_pixel_rings(roi_polygons, geotransform):
    """World-space ROI polygons -> rings in pixel coordinates."""
    rings = []
    for poly in roi_polygons:
        for ring in [poly.exterior, *poly.interiors]:
            rings.append(
                np.array(
                    [geotransform.world_to_pixel(x, y) for x, y in ring.coords],
                    dtype=np.float64,
                )
            )
    return rings


def canopy_cover(mask_src, roi_polygons=None):
    """Fraction of (ROI) pixels whose mask value is 1, by pixel-center test.

    Returns (fraction, covered_pixels, total_pixels).  Without an ROI the
    denominator is every non-nodata pixel.
    """
    rings = None
    if roi_polygons is not None:
        rings = roi_to_pixel_rings(roi_polygons, mask_src.geotransform)
    covered = 0
    total = 0
    for window in iter_block_windows(mask_src):
        mask = mask_src.read_window(window)[:, :, 0]
        if rings is not None:
            inside = _kernels.rasterize_rings(
                rings, window.width, window.height,
                origin_col=window.col_off, origin_row=window.row_off,
            ).astype(bool)
        elif mask_src.nodata is not None:
            inside = mask != mask_src.nodata
        else:
            inside = np.ones(mask.shape, dtype=bool)
        total += int(np.count_nonzero(inside))
        covered += int(np.count_nonzero((mask == 1) & inside))
    if total == 0:
        raise ValueError("empty region: ROI selects no pixels")
    return covered / total, covered, total
