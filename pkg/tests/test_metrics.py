import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import Point, Polygon, box

from tcd.georaster import MemoryRaster
from tcd.metrics import (
    ConfusionCounts,
    average_precision_50,
    chm_to_mask,
    confusion,
    confusion_streamed,
    evaluation_report,
    keypoint_recall,
    scores,
)
from tcd.predictors import CANOPY, TREE, InstanceObject

from conftest import disk_polygon

# 101-point interpolation of the precision staircase 1 (recall <= 0.5),
# 2/3 (recall (0.5, 1.0]): 51 grid points at 1 plus 50 at 2/3.
AP_EXAMPLE_3 = (51 + 50 * (2 / 3)) / 101


def naive_confusion(pred, gt, roi=None):
    tp = fp = fn = tn = 0
    h, w = pred.shape
    for r in range(h):
        for c in range(w):
            if roi is not None and not roi[r, c]:
                continue
            p, g = pred[r, c] == 1, gt[r, c] == 1
            if p and g:
                tp += 1
            elif p:
                fp += 1
            elif g:
                fn += 1
            else:
                tn += 1
    return tp, fp, fn, tn


class TestConfusion:
    def test_worked_example(self):
        pred = np.array([[1, 1], [0, 0]], np.uint8)
        gt = np.array([[1, 0], [0, 0]], np.uint8)
        c = confusion(pred, gt)
        assert (c.tp, c.fp, c.fn, c.tn) == (1, 1, 0, 2)

    def test_dims_must_match(self):
        with pytest.raises(ValueError, match="dims"):
            confusion(np.zeros((2, 2)), np.zeros((3, 3)))

    def test_roi_restricts(self):
        pred = np.ones((4, 4), np.uint8)
        gt = np.zeros((4, 4), np.uint8)
        roi = np.zeros((4, 4), np.uint8)
        roi[0, 0] = 1
        c = confusion(pred, gt, roi)
        assert (c.tp, c.fp, c.fn, c.tn) == (0, 1, 0, 0)

    def test_oracle_equivalence(self):
        rng = np.random.default_rng(21)
        for _ in range(100):
            pred = (rng.random((64, 64)) < 0.5).astype(np.uint8)
            gt = (rng.random((64, 64)) < 0.5).astype(np.uint8)
            c = confusion(pred, gt)
            assert (c.tp, c.fp, c.fn, c.tn) == naive_confusion(pred, gt)

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_swap_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        pred = (rng.random((16, 16)) < 0.5).astype(np.uint8)
        gt = (rng.random((16, 16)) < 0.5).astype(np.uint8)
        a = confusion(pred, gt)
        b = confusion(gt, pred)
        assert (a.tp, a.tn) == (b.tp, b.tn)
        assert (a.fp, a.fn) == (b.fn, b.fp)

    def test_streamed_matches_in_memory(self):
        rng = np.random.default_rng(5)
        pred = (rng.random((300, 211)) < 0.4).astype(np.uint8)
        gt = (rng.random((300, 211)) < 0.4).astype(np.uint8)
        streamed = confusion_streamed(
            MemoryRaster.from_array(pred), MemoryRaster.from_array(gt)
        )
        assert streamed == confusion(pred, gt)


class TestScores:
    def test_worked_example(self):
        s = scores(ConfusionCounts(tp=1, fp=1, fn=0, tn=2))
        assert s["iou"] == 0.5
        assert s["f1"] == pytest.approx(2 / 3)
        assert s["accuracy"] == 0.75

    def test_degenerate_all_negative(self):
        s = scores(ConfusionCounts(0, 0, 0, 10))
        assert s["iou"] == 1.0 and s["f1"] == 1.0 and s["accuracy"] == 1.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            scores(ConfusionCounts(0, 0, 0, 0))

    @given(
        tp=st.integers(0, 1000), fp=st.integers(0, 1000),
        fn=st.integers(0, 1000), tn=st.integers(0, 1000),
    )
    @settings(max_examples=200, deadline=None)
    def test_f1_iou_identity(self, tp, fp, fn, tn):
        if tp + fp + fn + tn == 0:
            return
        s = scores(ConfusionCounts(tp, fp, fn, tn))
        assert s["f1"] == pytest.approx(2 * s["iou"] / (1 + s["iou"]), abs=1e-12)
        assert s["f1"] >= s["iou"]


class TestChmToMask:
    def test_threshold_boundary(self):
        chm = np.array([[0.0, 2.9, 3.0, 5.0]], np.float32)
        mask = chm_to_mask(MemoryRaster.from_array(chm), 3.0)
        assert mask.tolist() == [[0, 0, 1, 1]]

    def test_nodata_zeroed(self):
        chm = np.array([[10.0, -9999.0]], np.float32)
        src = MemoryRaster.from_array(chm)
        src.nodata = -9999.0
        assert chm_to_mask(src, 3.0).tolist() == [[1, 0]]

    def test_sink_streaming(self):
        rng = np.random.default_rng(3)
        chm = (rng.random((40, 30)) * 10).astype(np.float32)
        src = MemoryRaster.from_array(chm)
        sink = MemoryRaster(30, 40, 1, "u8")
        chm_to_mask(src, 3.0, sink)
        assert (sink.data[:, :, 0] == (chm >= 3.0)).all()


class TestKeypointRecall:
    def make_scene(self):
        tree1 = InstanceObject(TREE, 0.9, box(0, 0, 10, 10))
        tree2 = InstanceObject(TREE, 0.8, box(20, 0, 30, 10))
        canopy = InstanceObject(CANOPY, 0.7, box(40, 0, 50, 10))
        points = [(5, 5), (25, 5), (45, 5), (100, 100)]
        return [tree1, tree2, canopy], points

    def test_worked_example(self):
        instances, points = self.make_scene()
        recall, matched = keypoint_recall(points, instances, include_canopy=False)
        assert (recall, matched) == (0.5, 2)
        recall, matched = keypoint_recall(points, instances, include_canopy=True)
        assert (recall, matched) == (0.75, 3)

    def test_canopy_only_excluded(self):
        canopy = InstanceObject(CANOPY, 0.9, box(0, 0, 100, 100))
        recall, _ = keypoint_recall([(10, 10), (50, 50)], [canopy], include_canopy=False)
        assert recall == 0.0

    def test_boundary_counts(self):
        tree = InstanceObject(TREE, 0.9, box(0, 0, 10, 10))
        recall, _ = keypoint_recall([(10, 5)], [tree], include_canopy=False)
        assert recall == 1.0

    def test_confidence_threshold(self):
        tree = InstanceObject(TREE, 0.3, box(0, 0, 10, 10))
        recall, _ = keypoint_recall([(5, 5)], [tree], include_canopy=False,
                                    confidence_threshold=0.5)
        assert recall == 0.0

    def test_empty_points_error(self):
        with pytest.raises(ValueError, match="empty ground truth"):
            keypoint_recall([], [], include_canopy=False)

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(17)
        instances = [
            InstanceObject(TREE if rng.random() < 0.7 else CANOPY,
                           float(rng.uniform(0.2, 1.0)),
                           disk_polygon(rng.uniform(0, 100), rng.uniform(0, 100),
                                        rng.uniform(2, 10)))
            for _ in range(30)
        ]
        points = [(float(x), float(y))
                  for x, y in rng.uniform(0, 100, size=(1000, 2))]
        for include_canopy in (False, True):
            for thr in (0.0, 0.5):
                classes = {TREE, CANOPY} if include_canopy else {TREE}
                expected = sum(
                    1 for pt in points
                    if any(i.class_name in classes and i.score >= thr
                           and i.geometry.distance(Point(pt)) == 0
                           for i in instances)
                )
                recall, matched = keypoint_recall(points, instances,
                                                  include_canopy, thr)
                assert matched == expected
                assert recall == expected / len(points)

    @given(seed=st.integers(0, 5000), thr=st.floats(0, 1))
    @settings(max_examples=30, deadline=None)
    def test_monotonicity(self, seed, thr):
        rng = np.random.default_rng(seed)
        instances = [
            InstanceObject(TREE if rng.random() < 0.6 else CANOPY,
                           float(rng.uniform(0, 1)),
                           disk_polygon(rng.uniform(0, 50), rng.uniform(0, 50),
                                        rng.uniform(2, 8)))
            for _ in range(10)
        ]
        points = [(float(x), float(y)) for x, y in rng.uniform(0, 50, size=(50, 2))]
        tree_only, _ = keypoint_recall(points, instances, False, thr)
        both, _ = keypoint_recall(points, instances, True, thr)
        assert both >= tree_only
        lower, _ = keypoint_recall(points, instances, True, thr / 2)
        assert lower >= both


def offset_box(base, frac):
    """A unit-square prediction overlapping `base` with the given IoU-ish shift."""
    minx, miny, maxx, maxy = base.bounds
    w = maxx - minx
    return box(minx + w * frac, miny, maxx + w * frac, maxy)


def pred_with_iou(gt, target_iou):
    """Axis-shifted copy of gt achieving exactly the requested IoU."""
    minx, miny, maxx, maxy = gt.bounds
    w = maxx - minx
    # shift s gives IoU (w - s) / (w + s)  ->  s = w (1 - iou) / (1 + iou)
    s = w * (1 - target_iou) / (1 + target_iou)
    return box(minx + s, miny, maxx + s, maxy)


class TestAveragePrecision:
    def test_single_match(self):
        gt = box(0, 0, 10, 10)
        pred = InstanceObject(TREE, 0.9, pred_with_iou(gt, 0.6))
        assert average_precision_50([pred], [gt]) == pytest.approx(1.0)

    def test_single_miss(self):
        gt = box(0, 0, 10, 10)
        pred = InstanceObject(TREE, 0.9, pred_with_iou(gt, 0.4))
        assert average_precision_50([pred], [gt]) == 0.0

    def test_hand_traced_three_predictions(self):
        gt1 = box(0, 0, 10, 10)
        gt2 = box(100, 0, 110, 10)
        preds = [
            InstanceObject(TREE, 0.9, pred_with_iou(gt1, 0.8)),
            InstanceObject(TREE, 0.8, pred_with_iou(gt2, 0.3)),
            InstanceObject(TREE, 0.7, pred_with_iou(gt2, 0.9)),
        ]
        ap = average_precision_50(preds, [gt1, gt2])
        assert ap == pytest.approx(AP_EXAMPLE_3, abs=1e-6)

    def test_no_gt_error(self):
        with pytest.raises(ValueError):
            average_precision_50([], [])

    def test_class_filter(self):
        gt = box(0, 0, 10, 10)
        preds = [InstanceObject(CANOPY, 0.9, gt)]
        assert average_precision_50(preds, [gt], class_filter=TREE) == 0.0
        assert average_precision_50(preds, [gt], class_filter=CANOPY) == 1.0

    def test_each_gt_matched_once(self):
        gt = box(0, 0, 10, 10)
        preds = [InstanceObject(TREE, 0.9, gt), InstanceObject(TREE, 0.8, gt)]
        ap = average_precision_50(preds, [gt])
        # Second duplicate is an FP but arrives after full recall: envelope
        # keeps precision 1 everywhere on the covered grid.
        assert ap == pytest.approx(1.0)

    @given(seed=st.integers(0, 5000))
    @settings(max_examples=30, deadline=None)
    def test_bounds_and_top_insert_monotonicity(self, seed):
        rng = np.random.default_rng(seed)
        gts = [box(i * 20, 0, i * 20 + 10, 10) for i in range(rng.integers(1, 6))]
        # gts[0] is deliberately left without any prediction so the added
        # top-score detection cannot steal a match from an existing one.
        preds = []
        for gt in gts[1:]:
            if rng.random() < 0.7:
                preds.append(InstanceObject(
                    TREE, float(rng.uniform(0.1, 0.9)),
                    pred_with_iou(gt, float(rng.uniform(0.2, 0.95)))))
        base = average_precision_50(preds, gts) if preds else 0.0
        assert 0.0 <= base <= 1.0
        boosted = preds + [InstanceObject(TREE, 1.0, gts[0])]
        assert average_precision_50(boosted, gts) >= base - 1e-12


class TestEvaluationReport:
    def test_assembly(self):
        report = evaluation_report(
            confusion_counts=ConfusionCounts(1, 1, 0, 2),
            keypoint_results={"tree_only": 0.5},
            ap50=0.7,
            instance_count=3,
        )
        assert report["iou"] == 0.5
        assert report["counts"]["tn"] == 2
        assert report["keypoint_recall"] == {"tree_only": 0.5}
        assert report["ap50"] == 0.7
        assert report["instance_count"] == 3
