"""Minimal GeoTIFF reader/writer for the pipeline's raster subset.

Supported: classic TIFF (little- or big-endian) with striped or tiled
layout, no compression or deflate, u8 (1 or 3 band) and f32 (1 band)
samples, pixel-interleaved, axis-aligned geotransform via the
ModelPixelScale + ModelTiepoint tags (or an unrotated ModelTransformation)
and an EPSG code in the GeoKey directory.  Outputs are always written as
tiled GeoTIFF with deflate compression and 256 px tiles.

Multi-file mosaics are handled through a plain-text manifest (see
:class:`MosaicSource`), a deliberately small stand-in for GDAL VRTs.
"""

from __future__ import annotations

import os
import struct
import threading
import zlib
from collections import OrderedDict

import numpy as np

from .georaster import (
    DTYPES,
    GeoTransform,
    RasterFormatError,
    RasterWindow,
    check_block,
    check_window,
)

TAG_IMAGE_WIDTH = 256
TAG_IMAGE_LENGTH = 257
TAG_BITS_PER_SAMPLE = 258
TAG_COMPRESSION = 259
TAG_PHOTOMETRIC = 262
TAG_STRIP_OFFSETS = 273
TAG_SAMPLES_PER_PIXEL = 277
TAG_ROWS_PER_STRIP = 278
TAG_STRIP_BYTE_COUNTS = 279
TAG_PLANAR_CONFIG = 284
TAG_PREDICTOR = 317
TAG_TILE_WIDTH = 322
TAG_TILE_LENGTH = 323
TAG_TILE_OFFSETS = 324
TAG_TILE_BYTE_COUNTS = 325
TAG_SAMPLE_FORMAT = 339
TAG_MODEL_PIXEL_SCALE = 33550
TAG_MODEL_TIEPOINT = 33922
TAG_MODEL_TRANSFORMATION = 34264
TAG_GEO_KEY_DIRECTORY = 34735
TAG_GDAL_NODATA = 42113

COMPRESSION_NONE = 1
COMPRESSION_DEFLATE_ADOBE = 8
COMPRESSION_DEFLATE_OLD = 32946

GEOKEY_MODEL_TYPE = 1024
GEOKEY_RASTER_TYPE = 1025
GEOKEY_GEOGRAPHIC_TYPE = 2048
GEOKEY_PROJECTED_CS_TYPE = 3072

_TYPE_SIZES = {1: 1, 2: 1, 3: 2, 4: 4, 5: 8, 6: 1, 7: 1, 8: 2, 9: 4, 10: 8, 11: 4, 12: 8}
_TYPE_FMT = {1: "B", 3: "H", 4: "I", 6: "b", 8: "h", 9: "i", 11: "f", 12: "d"}

OUTPUT_TILE_SIZE = 256


def _read_tag_values(fh, endian, ftype, count, value_bytes):
    size = _TYPE_SIZES.get(ftype)
    if size is None:
        return None
    total = size * count
    if total <= 4:
        raw = value_bytes[:total]
    else:
        (offset,) = struct.unpack(endian + "I", value_bytes)
        fh.seek(offset)
        raw = fh.read(total)
    if ftype == 2:
        return raw.split(b"\0")[0].decode("ascii", "replace")
    if ftype == 5:
        vals = struct.unpack(endian + "%dI" % (2 * count), raw)
        return tuple(n / d if d else 0.0 for n, d in zip(vals[::2], vals[1::2]))
    fmt = _TYPE_FMT.get(ftype)
    if fmt is None:
        return None
    return struct.unpack(endian + fmt * count, raw)


class GeoTiffReader:
    """Windowed reader with a small decoded-chunk LRU cache."""

    def __init__(self, path, cache_chunks: int = 16):
        self.path = os.fspath(path)
        self._fh = open(self.path, "rb")
        self._lock = threading.Lock()
        self._cache: OrderedDict[int, np.ndarray] = OrderedDict()
        self._cache_chunks = cache_chunks
        self._parse()

    def _parse(self):
        fh = self._fh
        head = fh.read(8)
        if len(head) < 8:
            raise RasterFormatError("truncated TIFF header")
        if head[:2] == b"II":
            endian = "<"
        elif head[:2] == b"MM":
            endian = ">"
        else:
            raise RasterFormatError("not a TIFF file")
        (magic,) = struct.unpack(endian + "H", head[2:4])
        if magic != 42:
            raise RasterFormatError("unsupported TIFF variant (BigTIFF?)")
        (ifd_off,) = struct.unpack(endian + "I", head[4:8])
        self._endian = endian

        fh.seek(ifd_off)
        (n_entries,) = struct.unpack(endian + "H", fh.read(2))
        raw_entries = fh.read(12 * n_entries)
        tags = {}
        for i in range(n_entries):
            tag, ftype, count = struct.unpack(
                endian + "HHI", raw_entries[12 * i : 12 * i + 8]
            )
            tags[tag] = (ftype, count, raw_entries[12 * i + 8 : 12 * i + 12])
        self._tags = {
            tag: _read_tag_values(fh, endian, ftype, count, vb)
            for tag, (ftype, count, vb) in tags.items()
        }

        t = self._tags
        self.width = int(t[TAG_IMAGE_WIDTH][0])
        self.height = int(t[TAG_IMAGE_LENGTH][0])
        self.band_count = int(t.get(TAG_SAMPLES_PER_PIXEL, (1,))[0])
        bits = t.get(TAG_BITS_PER_SAMPLE, (8,) * self.band_count)
        if len(set(bits)) != 1:
            raise RasterFormatError("mixed bits-per-sample is unsupported")
        fmt = t.get(TAG_SAMPLE_FORMAT, (1,) * self.band_count)[0]
        if bits[0] == 8 and fmt == 1:
            self.dtype = "u8"
            self._np_dtype = np.dtype("u1")
        elif bits[0] == 32 and fmt == 3:
            self.dtype = "f32"
            self._np_dtype = np.dtype(endian + "f4")
        else:
            raise RasterFormatError(
                f"unsupported sample type: {bits[0]} bits, format {fmt}"
            )
        if t.get(TAG_PLANAR_CONFIG, (1,))[0] != 1:
            raise RasterFormatError("planar (band-separate) layout is unsupported")
        if t.get(TAG_PREDICTOR, (1,))[0] != 1:
            raise RasterFormatError("TIFF predictor is unsupported")
        self._compression = t.get(TAG_COMPRESSION, (COMPRESSION_NONE,))[0]
        if self._compression not in (
            COMPRESSION_NONE,
            COMPRESSION_DEFLATE_ADOBE,
            COMPRESSION_DEFLATE_OLD,
        ):
            raise RasterFormatError(f"unsupported compression {self._compression}")

        if TAG_TILE_OFFSETS in t:
            self._tiled = True
            self._chunk_w = int(t[TAG_TILE_WIDTH][0])
            self._chunk_h = int(t[TAG_TILE_LENGTH][0])
            self._offsets = t[TAG_TILE_OFFSETS]
            self._counts = t[TAG_TILE_BYTE_COUNTS]
            self._chunks_across = -(-self.width // self._chunk_w)
        else:
            self._tiled = False
            self._chunk_w = self.width
            self._chunk_h = int(t.get(TAG_ROWS_PER_STRIP, (self.height,))[0])
            self._offsets = t[TAG_STRIP_OFFSETS]
            self._counts = t[TAG_STRIP_BYTE_COUNTS]
            self._chunks_across = 1

        self.nodata = None
        if TAG_GDAL_NODATA in t:
            try:
                self.nodata = float(str(t[TAG_GDAL_NODATA]).strip())
            except ValueError:
                pass

        self.geotransform = self._parse_geo()

    def _parse_geo(self) -> GeoTransform:
        t = self._tags
        crs = 0
        if TAG_GEO_KEY_DIRECTORY in t:
            keys = t[TAG_GEO_KEY_DIRECTORY]
            n_keys = keys[3]
            for k in range(n_keys):
                key_id, loc, _count, value = keys[4 + 4 * k : 8 + 4 * k]
                if key_id in (GEOKEY_PROJECTED_CS_TYPE, GEOKEY_GEOGRAPHIC_TYPE) and loc == 0:
                    crs = int(value)
        if TAG_MODEL_TRANSFORMATION in t:
            m = t[TAG_MODEL_TRANSFORMATION]
            if m[1] != 0 or m[4] != 0:
                raise RasterFormatError("rotated geotransforms are unsupported")
            return GeoTransform(m[3], m[7], m[0], m[5], crs)
        if TAG_MODEL_PIXEL_SCALE in t and TAG_MODEL_TIEPOINT in t:
            sx, sy = t[TAG_MODEL_PIXEL_SCALE][:2]
            i, j, _k, x, y, _z = t[TAG_MODEL_TIEPOINT][:6]
            return GeoTransform(x - i * sx, y + j * sy, sx, -sy, crs)
        # Ungeoreferenced input: identity pixel grid.
        return GeoTransform(0.0, 0.0, 1.0, -1.0, crs)

    def _decode_chunk(self, index: int) -> np.ndarray:
        with self._lock:
            cached = self._cache.get(index)
            if cached is not None:
                self._cache.move_to_end(index)
                return cached
            self._fh.seek(self._offsets[index])
            raw = self._fh.read(self._counts[index])
        if self._compression != COMPRESSION_NONE:
            raw = zlib.decompress(raw)
        if self._tiled:
            shape = (self._chunk_h, self._chunk_w, self.band_count)
        else:
            rows = min(self._chunk_h, self.height - index * self._chunk_h)
            shape = (rows, self.width, self.band_count)
        arr = np.frombuffer(raw, dtype=self._np_dtype, count=shape[0] * shape[1] * shape[2])
        arr = arr.reshape(shape).astype(DTYPES[self.dtype], copy=False)
        with self._lock:
            self._cache[index] = arr
            while len(self._cache) > self._cache_chunks:
                self._cache.popitem(last=False)
        return arr

    def read_window(self, window: RasterWindow) -> np.ndarray:
        check_window(self, window)
        out = np.empty((window.height, window.width, self.band_count),
                       dtype=DTYPES[self.dtype])
        c0 = window.col_off // self._chunk_w
        c1 = (window.col_end - 1) // self._chunk_w
        r0 = window.row_off // self._chunk_h
        r1 = (window.row_end - 1) // self._chunk_h
        for cr in range(r0, r1 + 1):
            for cc in range(c0, c1 + 1):
                chunk = self._decode_chunk(cr * self._chunks_across + cc)
                cy, cx = cr * self._chunk_h, cc * self._chunk_w
                y0 = max(window.row_off, cy)
                y1 = min(window.row_end, cy + chunk.shape[0])
                x0 = max(window.col_off, cx)
                x1 = min(window.col_end, cx + chunk.shape[1])
                out[y0 - window.row_off : y1 - window.row_off,
                    x0 - window.col_off : x1 - window.col_off] = chunk[
                    y0 - cy : y1 - cy, x0 - cx : x1 - cx]
        return out

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _pack_tag(tag, ftype, values, heap, heap_base):
    """Build one little-endian IFD entry, spilling large values to the heap."""
    if ftype == 2:
        raw = values.encode("ascii") + b"\0"
        count = len(raw)
    else:
        fmt = _TYPE_FMT[ftype]
        count = len(values)
        raw = struct.pack("<" + fmt * count, *values)
    if len(raw) <= 4:
        value_bytes = raw.ljust(4, b"\0")
    else:
        value_bytes = struct.pack("<I", heap_base + len(heap))
        heap.extend(raw)
        if len(heap) % 2:
            heap.append(0)
    return struct.pack("<HHI", tag, ftype, count) + value_bytes


def _geo_tags(gt: GeoTransform, nodata):
    tags = []
    tags.append((TAG_MODEL_PIXEL_SCALE, 12, (gt.pixel_w, abs(gt.pixel_h), 0.0)))
    tags.append((TAG_MODEL_TIEPOINT, 12, (0.0, 0.0, 0.0, gt.origin_x, gt.origin_y, 0.0)))
    if gt.crs_code:
        if gt.crs_code == 4326 or 4000 <= gt.crs_code < 5000:
            model, cs_key = 2, GEOKEY_GEOGRAPHIC_TYPE
        else:
            model, cs_key = 1, GEOKEY_PROJECTED_CS_TYPE
        keys = (
            1, 1, 0, 3,
            GEOKEY_MODEL_TYPE, 0, 1, model,
            GEOKEY_RASTER_TYPE, 0, 1, 1,
            cs_key, 0, 1, gt.crs_code,
        )
        tags.append((TAG_GEO_KEY_DIRECTORY, 3, keys))
    if nodata is not None:
        text = str(int(nodata)) if float(nodata).is_integer() else repr(float(nodata))
        tags.append((TAG_GDAL_NODATA, 2, text))
    return tags


class GeoTiffSink:
    """Incremental tiled-GeoTIFF writer with bounded memory.

    Windows are written in any order to an uncompressed scratch file next
    to the target; :meth:`close` streams the scratch through deflate into
    the final tiled layout.  Peak memory is one tile-row strip.
    """

    def __init__(self, path, width, height, band_count=1, dtype="f32",
                 geotransform=None, nodata=None):
        if dtype not in DTYPES:
            raise RasterFormatError(f"unsupported dtype {dtype!r}")
        self.path = os.fspath(path)
        self.width = int(width)
        self.height = int(height)
        self.band_count = int(band_count)
        self.dtype = dtype
        self.geotransform = geotransform or GeoTransform(0.0, 0.0, 1.0, -1.0)
        self.nodata = nodata
        self._item = DTYPES[dtype]().itemsize
        self._row_bytes = self.width * self.band_count * self._item
        self._scratch_path = self.path + ".scratch"
        self._scratch = open(self._scratch_path, "w+b")
        self._scratch.truncate(self._row_bytes * self.height)
        self._lock = threading.Lock()
        self._closed = False

    def write_window(self, window: RasterWindow, block: np.ndarray) -> None:
        block = np.ascontiguousarray(block, dtype=DTYPES[self.dtype])
        if block.ndim == 2:
            block = block[:, :, np.newaxis]
        check_block(self, window, block)
        px = self.band_count * self._item
        with self._lock:
            for r in range(window.height):
                off = (window.row_off + r) * self._row_bytes + window.col_off * px
                self._scratch.seek(off)
                self._scratch.write(block[r].tobytes())

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            self._finalize()
        finally:
            self._scratch.close()
            os.unlink(self._scratch_path)

    def _finalize(self) -> None:
        ts = OUTPUT_TILE_SIZE
        tiles_across = -(-self.width // ts)
        tiles_down = -(-self.height // ts)
        offsets: list[int] = []
        counts: list[int] = []
        with open(self.path, "wb") as out:
            out.write(b"II*\0\0\0\0\0")
            pos = 8
            for ty in range(tiles_down):
                row0 = ty * ts
                rows = min(ts, self.height - row0)
                self._scratch.seek(row0 * self._row_bytes)
                strip = np.frombuffer(
                    self._scratch.read(rows * self._row_bytes), dtype=DTYPES[self.dtype]
                ).reshape(rows, self.width, self.band_count)
                for tx in range(tiles_across):
                    col0 = tx * ts
                    cols = min(ts, self.width - col0)
                    tile = np.zeros((ts, ts, self.band_count), dtype=DTYPES[self.dtype])
                    tile[:rows, :cols] = strip[:, col0 : col0 + cols]
                    data = zlib.compress(tile.tobytes(), 6)
                    offsets.append(pos)
                    counts.append(len(data))
                    out.write(data)
                    pos += len(data)
            if pos % 2:
                out.write(b"\0")
                pos += 1
            ifd_offset = pos
            bits = 8 * self._item
            photometric = 2 if (self.dtype == "u8" and self.band_count == 3) else 1
            sample_format = 3 if self.dtype == "f32" else 1
            tag_list = [
                (TAG_IMAGE_WIDTH, 4, (self.width,)),
                (TAG_IMAGE_LENGTH, 4, (self.height,)),
                (TAG_BITS_PER_SAMPLE, 3, (bits,) * self.band_count),
                (TAG_COMPRESSION, 3, (COMPRESSION_DEFLATE_ADOBE,)),
                (TAG_PHOTOMETRIC, 3, (photometric,)),
                (TAG_SAMPLES_PER_PIXEL, 3, (self.band_count,)),
                (TAG_PLANAR_CONFIG, 3, (1,)),
                (TAG_TILE_WIDTH, 3, (ts,)),
                (TAG_TILE_LENGTH, 3, (ts,)),
                (TAG_TILE_OFFSETS, 4, tuple(offsets)),
                (TAG_TILE_BYTE_COUNTS, 4, tuple(counts)),
                (TAG_SAMPLE_FORMAT, 3, (sample_format,) * self.band_count),
            ]
            tag_list.extend(_geo_tags(self.geotransform, self.nodata))
            tag_list.sort(key=lambda item: item[0])
            heap = bytearray()
            heap_base = ifd_offset + 2 + 12 * len(tag_list) + 4
            entries = b"".join(
                _pack_tag(tag, ftype, values, heap, heap_base)
                for tag, ftype, values in tag_list
            )
            out.write(struct.pack("<H", len(tag_list)) + entries + b"\0\0\0\0")
            out.write(bytes(heap))
            out.seek(4)
            out.write(struct.pack("<I", ifd_offset))

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_geotiff(path, array, geotransform=None, nodata=None) -> None:
    """Write a full in-memory array as a tiled deflate GeoTIFF."""
    array = np.asarray(array)
    if array.ndim == 2:
        array = array[:, :, np.newaxis]
    dtype = "f32" if array.dtype.kind == "f" else "u8"
    sink = GeoTiffSink(path, array.shape[1], array.shape[0], array.shape[2],
                       dtype, geotransform, nodata)
    with sink:
        sink.write_window(RasterWindow(0, 0, array.shape[1], array.shape[0]),
                          array.astype(DTYPES[dtype], copy=False))


class MosaicSource:
    """Multi-file raster assembled from a plain-text manifest.

    Manifest format (documented in the README)::

        tcd-mosaic 1
        size <width> <height>
        <member-path> <col_off> <row_off>
        ...

    Member paths are resolved relative to the manifest.  All members must
    share dtype, band count and pixel size; uncovered pixels read as the
    nodata value (or 0).  Members are opened lazily on first access.
    """

    def __init__(self, path):
        self.path = os.fspath(path)
        base = os.path.dirname(os.path.abspath(self.path))
        self._members: list[tuple[str, int, int]] = []
        with open(self.path, "r", encoding="utf-8") as fh:
            header = fh.readline().split()
            if header[:1] != ["tcd-mosaic"]:
                raise RasterFormatError("not a tcd-mosaic manifest")
            size = fh.readline().split()
            if len(size) != 3 or size[0] != "size":
                raise RasterFormatError("manifest missing 'size W H' line")
            self.width, self.height = int(size[1]), int(size[2])
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.rsplit(None, 2)
                if len(parts) != 3:
                    raise RasterFormatError(f"bad manifest line: {line!r}")
                self._members.append(
                    (os.path.join(base, parts[0]), int(parts[1]), int(parts[2]))
                )
        if not self._members:
            raise RasterFormatError("manifest lists no members")
        self._readers: dict[int, GeoTiffReader] = {}
        self._lock = threading.Lock()
        first = self._reader(0)
        gt = first.geotransform
        col0, row0 = self._members[0][1], self._members[0][2]
        self.geotransform = GeoTransform(
            gt.origin_x - col0 * gt.pixel_w,
            gt.origin_y - row0 * gt.pixel_h,
            gt.pixel_w,
            gt.pixel_h,
            gt.crs_code,
        )
        self.band_count = first.band_count
        self.dtype = first.dtype
        self.nodata = first.nodata

    def _reader(self, index: int) -> GeoTiffReader:
        with self._lock:
            reader = self._readers.get(index)
            if reader is None:
                reader = GeoTiffReader(self._members[index][0])
                self._readers[index] = reader
        return reader

    def read_window(self, window: RasterWindow) -> np.ndarray:
        check_window(self, window)
        fill = self.nodata if self.nodata is not None else 0
        out = np.full((window.height, window.width, self.band_count), fill,
                      dtype=DTYPES[self.dtype])
        for i, (_path, col_off, row_off) in enumerate(self._members):
            reader = self._reader(i)
            x0 = max(window.col_off, col_off)
            x1 = min(window.col_end, col_off + reader.width)
            y0 = max(window.row_off, row_off)
            y1 = min(window.row_end, row_off + reader.height)
            if x1 <= x0 or y1 <= y0:
                continue
            sub = reader.read_window(
                RasterWindow(x0 - col_off, y0 - row_off, x1 - x0, y1 - y0)
            )
            out[y0 - window.row_off : y1 - window.row_off,
                x0 - window.col_off : x1 - window.col_off] = sub
        return out

    def close(self) -> None:
        for reader in self._readers.values():
            reader.close()


def open_raster(path):
    """Open a GeoTIFF or mosaic manifest as a RasterSource."""
    path = os.fspath(path)
    with open(path, "rb") as fh:
        head = fh.read(10)
    if head[:2] in (b"II", b"MM"):
        return GeoTiffReader(path)
    if head.startswith(b"tcd-mosaic"):
        return MosaicSource(path)
    raise RasterFormatError(f"unrecognized raster input: {path}")
