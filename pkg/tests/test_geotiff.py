import numpy as np
import pytest

from tcd.georaster import GeoTransform, RasterFormatError, RasterWindow, full_window
from tcd.geotiff import GeoTiffReader, GeoTiffSink, MosaicSource, open_raster, write_geotiff


def test_u8_rgb_round_trip(tmp_path, world_gt):
    rng = np.random.default_rng(1)
    data = rng.integers(0, 255, size=(300, 200, 3)).astype(np.uint8)
    path = tmp_path / "rgb.tif"
    write_geotiff(path, data, world_gt)
    with GeoTiffReader(path) as r:
        assert (r.width, r.height, r.band_count) == (200, 300, 3)
        assert r.dtype == "u8"
        assert r.geotransform == world_gt
        back = r.read_window(full_window(r))
    assert (back == data).all()


def test_f32_round_trip_with_nodata(tmp_path, world_gt):
    rng = np.random.default_rng(2)
    data = rng.random((257, 513)).astype(np.float32)
    path = tmp_path / "conf.tif"
    write_geotiff(path, data, world_gt, nodata=-1)
    with GeoTiffReader(path) as r:
        assert r.dtype == "f32"
        assert r.nodata == -1
        back = r.read_window(full_window(r))[:, :, 0]
    assert (back == data).all()


def test_windowed_reads_match_full(tmp_path):
    rng = np.random.default_rng(3)
    data = rng.integers(0, 255, size=(520, 610, 1)).astype(np.uint8)
    path = tmp_path / "win.tif"
    write_geotiff(path, data)
    with GeoTiffReader(path) as r:
        for _ in range(20):
            x = int(rng.integers(0, 500))
            y = int(rng.integers(0, 400))
            w = int(rng.integers(1, 110))
            h = int(rng.integers(1, 110))
            block = r.read_window(RasterWindow(x, y, w, h))
            assert (block == data[y : y + h, x : x + w]).all()


def test_sink_incremental_out_of_order(tmp_path):
    path = tmp_path / "inc.tif"
    sink = GeoTiffSink(path, 100, 80, 1, "u8")
    with sink:
        sink.write_window(RasterWindow(50, 40, 50, 40), np.full((40, 50, 1), 2, np.uint8))
        sink.write_window(RasterWindow(0, 0, 50, 40), np.full((40, 50, 1), 1, np.uint8))
        sink.write_window(RasterWindow(50, 0, 50, 40), np.full((40, 50, 1), 3, np.uint8))
        sink.write_window(RasterWindow(0, 40, 50, 40), np.full((40, 50, 1), 4, np.uint8))
    with GeoTiffReader(path) as r:
        full = r.read_window(full_window(r))[:, :, 0]
    assert (full[:40, :50] == 1).all()
    assert (full[:40, 50:] == 3).all()
    assert (full[40:, :50] == 4).all()
    assert (full[40:, 50:] == 2).all()
    assert not (tmp_path / "inc.tif.scratch").exists()


def test_reject_garbage(tmp_path):
    path = tmp_path / "bad.tif"
    path.write_bytes(b"definitely not a tiff")
    with pytest.raises(RasterFormatError):
        open_raster(path)


def test_epsg_and_geotransform_survive(tmp_path):
    gt = GeoTransform(12345.5, -678.25, 0.5, -0.5, 32633)
    path = tmp_path / "crs.tif"
    write_geotiff(path, np.zeros((16, 16), np.uint8), gt)
    with GeoTiffReader(path) as r:
        assert r.geotransform.crs_code == 32633
        assert r.geotransform.origin_x == 12345.5
        assert r.geotransform.pixel_h == -0.5


def test_mosaic_manifest(tmp_path):
    gt = GeoTransform(1000.0, 2000.0, 1.0, -1.0, 3395)
    left = np.full((64, 32, 1), 10, np.uint8)
    right = np.full((64, 32, 1), 20, np.uint8)
    write_geotiff(tmp_path / "left.tif", left, gt)
    gt_right = GeoTransform(1032.0, 2000.0, 1.0, -1.0, 3395)
    write_geotiff(tmp_path / "right.tif", right, gt_right)
    manifest = tmp_path / "mosaic.txt"
    manifest.write_text("tcd-mosaic 1\nsize 64 64\nleft.tif 0 0\nright.tif 32 0\n")
    src = open_raster(manifest)
    assert isinstance(src, MosaicSource)
    assert (src.width, src.height) == (64, 64)
    assert src.geotransform == gt
    block = src.read_window(RasterWindow(30, 0, 4, 64))
    assert (block[:, :2] == 10).all()
    assert (block[:, 2:] == 20).all()
    src.close()
