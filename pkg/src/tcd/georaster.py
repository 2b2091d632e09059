"""Georeferenced raster abstraction: affine geotransform math, pixel
windows and the source/sink contracts used for out-of-core access.

Only axis-aligned (north-up style) geotransforms are supported; rasters
with rotation or shear terms are rejected when opened.  Two sample types
exist in the pipeline: ``u8`` imagery and ``f32`` confidence grids.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Iterator, Optional, Protocol, runtime_checkable

import numpy as np

DTYPES = {"u8": np.uint8, "f32": np.float32}


class BoundsError(ValueError):
    """A window falls outside the raster extent."""


class RasterFormatError(ValueError):
    """An input raster violates the supported subset of the format."""


@dataclass(frozen=True)
class GeoTransform:
    """Affine pixel->world mapping without rotation/shear.

    ``origin_x``/``origin_y`` locate the outer corner of pixel (0, 0);
    ``pixel_h`` is conventionally negative for north-up imagery.
    """

    origin_x: float
    origin_y: float
    pixel_w: float
    pixel_h: float
    crs_code: int = 3395

    def __post_init__(self):
        if self.pixel_w == 0 or self.pixel_h == 0:
            raise ValueError("pixel size must be nonzero")

    def pixel_to_world(self, col: float, row: float) -> tuple[float, float]:
        return (self.origin_x + col * self.pixel_w, self.origin_y + row * self.pixel_h)

    def world_to_pixel(self, x: float, y: float) -> tuple[float, float]:
        return ((x - self.origin_x) / self.pixel_w, (y - self.origin_y) / self.pixel_h)


@dataclass(frozen=True)
class RasterWindow:
    """A rectangular block of pixels: offsets are >= 0, sizes > 0."""

    col_off: int
    row_off: int
    width: int
    height: int

    def __post_init__(self):
        if self.col_off < 0 or self.row_off < 0:
            raise ValueError(f"negative window offset: {self}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"non-positive window size: {self}")

    @property
    def col_end(self) -> int:
        return self.col_off + self.width

    @property
    def row_end(self) -> int:
        return self.row_off + self.height

    @property
    def area(self) -> int:
        return self.width * self.height

    def contains(self, other: "RasterWindow") -> bool:
        return (
            self.col_off <= other.col_off
            and self.row_off <= other.row_off
            and other.col_end <= self.col_end
            and other.row_end <= self.row_end
        )

    def intersects(self, other: "RasterWindow") -> bool:
        return (
            self.col_off < other.col_end
            and other.col_off < self.col_end
            and self.row_off < other.row_end
            and other.row_off < self.row_end
        )


@runtime_checkable
class RasterSource(Protocol):
    width: int
    height: int
    band_count: int
    dtype: str
    geotransform: GeoTransform
    nodata: Optional[float]

    def read_window(self, window: RasterWindow) -> np.ndarray:
        """Return a (height, width, bands) array for the window."""
        ...


@runtime_checkable
class RasterSink(Protocol):
    width: int
    height: int
    band_count: int
    dtype: str
    geotransform: GeoTransform
    nodata: Optional[float]

    def write_window(self, window: RasterWindow, block: np.ndarray) -> None: ...

    def close(self) -> None: ...


def check_window(src, window: RasterWindow) -> None:
    if window.col_end > src.width or window.row_end > src.height:
        raise BoundsError(
            f"window {window} exceeds raster bounds {src.width}x{src.height}"
        )


def check_block(sink, window: RasterWindow, block: np.ndarray) -> None:
    check_window(sink, window)
    expect = (window.height, window.width, sink.band_count)
    if block.shape != expect:
        raise ValueError(f"block shape {block.shape} does not match window {expect}")


def full_window(src) -> RasterWindow:
    return RasterWindow(0, 0, src.width, src.height)


def iter_block_windows(src, block_rows: int = 1024) -> Iterator[RasterWindow]:
    """Horizontal strips covering the raster, for streaming whole-raster ops."""
    for row in range(0, src.height, block_rows):
        yield RasterWindow(0, row, src.width, min(block_rows, src.height - row))


class MemoryRaster:
    """In-memory raster implementing both the source and sink contracts."""

    def __init__(self, width, height, band_count=1, dtype="u8",
                 geotransform=None, nodata=None, fill=0):
        if dtype not in DTYPES:
            raise RasterFormatError(f"unsupported dtype {dtype!r}")
        self.width = int(width)
        self.height = int(height)
        self.band_count = int(band_count)
        self.dtype = dtype
        self.geotransform = geotransform or GeoTransform(0.0, 0.0, 1.0, -1.0)
        self.nodata = nodata
        self.data = np.full((self.height, self.width, self.band_count), fill,
                            dtype=DTYPES[dtype])
        self._lock = threading.Lock()

    @classmethod
    def from_array(cls, array, geotransform=None, nodata=None):
        array = np.asarray(array)
        if array.ndim == 2:
            array = array[:, :, np.newaxis]
        dtype = "f32" if array.dtype == np.float32 else "u8"
        r = cls(array.shape[1], array.shape[0], array.shape[2], dtype,
                geotransform, nodata)
        r.data[:] = array
        return r

    def read_window(self, window: RasterWindow) -> np.ndarray:
        check_window(self, window)
        return self.data[window.row_off:window.row_end,
                         window.col_off:window.col_end].copy()

    def write_window(self, window: RasterWindow, block: np.ndarray) -> None:
        block = np.asarray(block, dtype=DTYPES[self.dtype])
        if block.ndim == 2:
            block = block[:, :, np.newaxis]
        check_block(self, window, block)
        with self._lock:
            self.data[window.row_off:window.row_end,
                      window.col_off:window.col_end] = block

    def close(self) -> None:
        pass


class SyntheticSource:
    """Procedural raster: pixel values come from a function of (col, row).

    Backs the large out-of-core tests without materializing the raster.
    ``fn(cols, rows)`` receives integer index grids and returns either a
    (h, w) or (h, w, bands) array.
    """

    def __init__(self, width, height, fn, band_count=1, dtype="u8",
                 geotransform=None, nodata=None):
        self.width = int(width)
        self.height = int(height)
        self.band_count = int(band_count)
        self.dtype = dtype
        self.geotransform = geotransform or GeoTransform(0.0, 0.0, 1.0, -1.0)
        self.nodata = nodata
        self._fn = fn

    def read_window(self, window: RasterWindow) -> np.ndarray:
        check_window(self, window)
        cols = np.arange(window.col_off, window.col_end)
        rows = np.arange(window.row_off, window.row_end)
        cgrid, rgrid = np.meshgrid(cols, rows)
        block = np.asarray(self._fn(cgrid, rgrid), dtype=DTYPES[self.dtype])
        if block.ndim == 2:
            block = np.repeat(block[:, :, np.newaxis], self.band_count, axis=2)
        return block


class BufferLedger:
    """Tracks live pixel-buffer bytes handed out by instrumented backends.

    Buffers are registered with a weakref finalizer; CPython's refcounting
    releases them deterministically, so ``peak_bytes`` reflects the true
    maximum of simultaneously held blocks.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self.current_bytes = 0
        self.peak_bytes = 0

    def register(self, array: np.ndarray) -> np.ndarray:
        import weakref

        nbytes = array.nbytes
        with self._lock:
            self.current_bytes += nbytes
            self.peak_bytes = max(self.peak_bytes, self.current_bytes)
        weakref.finalize(array, self._release, nbytes)
        return array

    def _release(self, nbytes: int) -> None:
        with self._lock:
            self.current_bytes -= nbytes


class InstrumentedSource:
    """Wraps a source, accounting every returned block in a BufferLedger."""

    def __init__(self, inner: RasterSource, ledger: BufferLedger):
        self._inner = inner
        self.ledger = ledger
        self.read_count = 0

    def __getattr__(self, name):
        return getattr(self._inner, name)

    def read_window(self, window: RasterWindow) -> np.ndarray:
        self.read_count += 1
        return self.ledger.register(self._inner.read_window(window))


class CoverageSink:
    """Write-only sink recording per-pixel write counts without storing data.

    Used to assert the write-once stitching property on rasters too large
    to hold in memory.
    """

    def __init__(self, width, height, band_count=1, dtype="f32",
                 geotransform=None, nodata=None):
        self.width = int(width)
        self.height = int(height)
        self.band_count = int(band_count)
        self.dtype = dtype
        self.geotransform = geotransform or GeoTransform(0.0, 0.0, 1.0, -1.0)
        self.nodata = nodata
        self.counts = np.zeros((self.height, self.width), dtype=np.uint8)
        self.pixels_written = 0
        self._lock = threading.Lock()

    def write_window(self, window: RasterWindow, block: np.ndarray) -> None:
        block = np.asarray(block)
        if block.ndim == 2:
            block = block[:, :, np.newaxis]
        check_block(self, window, block)
        with self._lock:
            self.counts[window.row_off:window.row_end,
                        window.col_off:window.col_end] += 1
            self.pixels_written += window.area

    def close(self) -> None:
        pass
