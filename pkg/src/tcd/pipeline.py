"""Instance prediction over a tile grid: per-tile inference and
post-processing, then the global cross-tile merge.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor

from .merge import MergeConfig, TileStats, global_merge, tile_postprocess
from .predictors import PredictorError
from .stitch import RunSummary, StitchConfig
from .tiling import TileGridSpec, build_grid, is_empty_tile


def predict_instances_tiled(src, predictor, stitch_cfg: StitchConfig,
                            merge_cfg: MergeConfig):
    """Returns (instances, summary, tile_stats); instances are world-space
    and already globally merged."""
    t0 = time.monotonic()
    grid = build_grid(
        TileGridSpec(src.width, src.height, stitch_cfg.tile_size, stitch_cfg.overlap)
    )
    summary = RunSummary(tiles_total=len(grid))
    stats = TileStats()
    collected = []

    def run_tile(tile):
        block = src.read_window(tile.window)
        if stitch_cfg.skip_empty and is_empty_tile(block, src.nodata):
            return "skipped", []
        try:
            raw = predictor.predict_instances(block, window=tile.window)
        except PredictorError:
            restart = getattr(predictor, "restart", None)
            if restart is None:
                return "failed", []
            try:
                restart()
                raw = predictor.predict_instances(block, window=tile.window)
            except PredictorError:
                return "failed", []
        return "ok", raw

    def handle(result, tile):
        status, raw = result
        if status == "skipped":
            summary.tiles_skipped += 1
            return
        if status == "failed":
            summary.tiles_failed += 1
            summary.failed_tiles.append(list(tile.index))
            return
        summary.tiles_processed += 1
        collected.extend(
            tile_postprocess(raw, tile, src.width, src.height,
                             src.geotransform, merge_cfg, stats)
        )

    if stitch_cfg.workers == 1:
        for tile in grid:
            handle(run_tile(tile), tile)
    else:
        with ThreadPoolExecutor(max_workers=stitch_cfg.workers) as pool:
            for start in range(0, len(grid), stitch_cfg.batch_size):
                batch = grid[start : start + stitch_cfg.batch_size]
                futures = [pool.submit(run_tile, tile) for tile in batch]
                for future, tile in zip(futures, batch):
                    handle(future.result(), tile)

    merged = global_merge(collected, merge_cfg)
    summary.elapsed_s = time.monotonic() - t0
    return merged, summary, stats
