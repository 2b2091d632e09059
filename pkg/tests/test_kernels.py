import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tcd._kernels import BACKEND, _fallback
from tcd._kernels import block_all_equal, confusion_counts, rasterize_rings

from conftest import brute_force_point_in_rings, disk_polygon

try:
    from tcd._kernels import _speedups
except ImportError:
    _speedups = None

needs_speedups = pytest.mark.skipif(
    _speedups is None, reason="compiled backend unavailable"
)


def ring_array(poly):
    return np.asarray(poly.exterior.coords, dtype=np.float64)


class TestRasterizeRings:
    def test_unit_square(self):
        rings = [np.array([(0, 0), (10, 0), (10, 10), (0, 10)], np.float64)]
        mask = rasterize_rings(rings, 16, 16)
        assert int(mask.sum()) == 100
        assert mask[0, 0] == 1 and mask[10, 10] == 0

    def test_empty(self):
        assert rasterize_rings([], 8, 8).sum() == 0

    def test_degenerate_ring_ignored(self):
        rings = [np.array([(0, 0), (5, 5)], np.float64)]
        assert rasterize_rings(rings, 8, 8).sum() == 0

    def test_origin_offset(self):
        rings = [np.array([(10, 10), (20, 10), (20, 20), (10, 20)], np.float64)]
        full = rasterize_rings(rings, 32, 32)
        shifted = rasterize_rings(rings, 16, 16, origin_col=8, origin_row=8)
        assert (shifted == full[8:24, 8:24]).all()

    def test_hole(self):
        rings = [
            np.array([(0, 0), (10, 0), (10, 10), (0, 10)], np.float64),
            np.array([(3, 3), (7, 3), (7, 7), (3, 7)], np.float64),
        ]
        mask = rasterize_rings(rings, 16, 16)
        assert int(mask.sum()) == 100 - 16
        assert mask[5, 5] == 0

    @given(seed=st.integers(0, 5000))
    @settings(max_examples=25, deadline=None)
    def test_brute_force_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(3, 9))
        pts = rng.uniform(0, 24, size=(n, 2))
        rings = [pts]
        mask = rasterize_rings(rings, 24, 24)
        for r in range(24):
            for c in range(24):
                assert bool(mask[r, c]) == brute_force_point_in_rings(
                    c + 0.5, r + 0.5, rings
                ), (r, c)


class TestBackendParity:
    @needs_speedups
    @given(seed=st.integers(0, 5000))
    @settings(max_examples=25, deadline=None)
    def test_rasterize_parity(self, seed):
        rng = np.random.default_rng(seed)
        rings = []
        for _ in range(rng.integers(1, 4)):
            n = int(rng.integers(3, 12))
            rings.append(rng.uniform(-5, 40, size=(n, 2)))
        args = (rings, 32, 32)
        a = _fallback.rasterize_rings(*args, origin_col=1.5, origin_row=-2.0)
        b = _speedups.rasterize_rings(*args, origin_col=1.5, origin_row=-2.0)
        assert (a == b).all()

    @needs_speedups
    def test_rasterize_disk_parity(self):
        rings = [ring_array(disk_polygon(50, 50, 30))]
        a = _fallback.rasterize_rings(rings, 100, 100)
        b = _speedups.rasterize_rings(rings, 100, 100)
        assert (a == b).all()
        assert abs(int(a.sum()) - np.pi * 30**2) < 60

    @needs_speedups
    @given(seed=st.integers(0, 5000))
    @settings(max_examples=25, deadline=None)
    def test_confusion_parity(self, seed):
        rng = np.random.default_rng(seed)
        pred = (rng.random((31, 17)) < 0.5).astype(np.uint8)
        gt = (rng.random((31, 17)) < 0.5).astype(np.uint8)
        roi = (rng.random((31, 17)) < 0.8).astype(np.uint8)
        assert _fallback.confusion_counts(pred, gt) == _speedups.confusion_counts(pred, gt)
        assert (_fallback.confusion_counts(pred, gt, roi)
                == _speedups.confusion_counts(pred, gt, roi))

    @needs_speedups
    def test_block_all_equal_parity(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            block = rng.choice([0, 7], size=(9, 9, 3)).astype(np.uint8)
            for value in (0, 7):
                assert (_fallback.block_all_equal(block, value)
                        == _speedups.block_all_equal(block, value))


class TestBackendSelection:
    def test_backend_reported(self):
        assert BACKEND in ("compiled", "python")

    def test_env_forces_fallback(self):
        import subprocess
        import sys

        out = subprocess.run(
            [sys.executable, "-c",
             "import tcd._kernels as k; print(k.BACKEND)"],
            env={"TCD_NO_SPEEDUPS": "1", "PATH": "/usr/bin:/bin"},
            capture_output=True, text=True, check=True,
        )
        assert out.stdout.strip() == "python"


class TestConfusionCounts:
    def test_sums_to_total(self):
        rng = np.random.default_rng(0)
        pred = (rng.random((20, 20)) < 0.5).astype(np.uint8)
        gt = (rng.random((20, 20)) < 0.5).astype(np.uint8)
        assert sum(confusion_counts(pred, gt)) == 400


class TestBlockAllEqual:
    def test_basic(self):
        assert block_all_equal(np.zeros((4, 4), np.uint8), 0)
        assert not block_all_equal(np.eye(4, dtype=np.uint8), 0)
