"""Evaluation mathematics: pixel confusion metrics, CHM thresholding,
keypoint recall against predicted polygons, and AP at IoU 0.5.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from shapely.geometry import Point
from shapely.prepared import prep

from . import _kernels
from .georaster import iter_block_windows
from .merge import polygon_iou
from .predictors import CANOPY, TREE


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp,
            self.fn + other.fn, self.tn + other.tn,
        )


def confusion(pred_mask, gt_mask, roi_mask=None) -> ConfusionCounts:
    """Pixel confusion counts over binary masks (positive class = 1).

    ``roi_mask`` restricts counting to the pixels where it is true.
    """
    pred_mask = np.asarray(pred_mask)
    gt_mask = np.asarray(gt_mask)
    if pred_mask.shape != gt_mask.shape:
        raise ValueError(
            f"mask dims differ: {pred_mask.shape} vs {gt_mask.shape}"
        )
    tp, fp, fn, tn = _kernels.confusion_counts(pred_mask, gt_mask, roi_mask)
    return ConfusionCounts(tp, fp, fn, tn)


def confusion_streamed(pred_src, gt_src, roi_rings=None) -> ConfusionCounts:
    """Windowed confusion over raster sources (for out-of-core inputs)."""
    if (pred_src.width, pred_src.height) != (gt_src.width, gt_src.height):
        raise ValueError("prediction and truth rasters have different dims")
    counts = ConfusionCounts(0, 0, 0, 0)
    for window in iter_block_windows(pred_src):
        pred = pred_src.read_window(window)[:, :, 0]
        gt = gt_src.read_window(window)[:, :, 0]
        roi = None
        if roi_rings is not None:
            roi = _kernels.rasterize_rings(
                roi_rings, window.width, window.height,
                origin_col=window.col_off, origin_row=window.row_off,
            )
        counts = counts + confusion(pred, gt, roi)
    return counts


def scores(c: ConfusionCounts) -> dict:
    """IoU / F1 / accuracy from confusion counts.

    Degenerate convention: with no positives anywhere (tp=fp=fn=0) both
    IoU and F1 are 1.
    """
    if c.total <= 0:
        raise ValueError("empty confusion counts")
    if c.tp == 0 and c.fp == 0 and c.fn == 0:
        iou = f1 = 1.0
    else:
        iou = c.tp / (c.tp + c.fp + c.fn)
        f1 = 2 * c.tp / (2 * c.tp + c.fp + c.fn)
    return {
        "iou": iou,
        "f1": f1,
        "accuracy": (c.tp + c.tn) / c.total,
    }


def chm_to_mask(chm_src, height_threshold: float = 3.0, sink=None):
    """Binarize a canopy height model: 1 iff height >= threshold (meters).

    Nodata pixels map to 0.  With a sink the conversion is streamed;
    otherwise the full mask array is returned.
    """
    full = None
    if sink is None:
        full = np.zeros((chm_src.height, chm_src.width), dtype=np.uint8)
    for window in iter_block_windows(chm_src):
        chm = chm_src.read_window(window)[:, :, 0]
        mask = chm >= height_threshold
        if chm_src.nodata is not None:
            mask &= chm != chm_src.nodata
        mask = mask.astype(np.uint8)
        if sink is not None:
            sink.write_window(window, mask[:, :, np.newaxis])
        else:
            full[window.row_off:window.row_end, window.col_off:window.col_end] = mask
    return full


def keypoint_recall(points, instances, include_canopy: bool,
                    confidence_threshold: float = 0.0):
    """Fraction of ground-truth points inside predicted polygons.

    A point matches iff it lies inside or on the boundary of a tree
    polygon with sufficient score (canopy polygons too if requested).
    Returns (recall, matched_count).
    """
    if not points:
        raise ValueError("empty ground truth: no keypoints supplied")
    classes = {TREE, CANOPY} if include_canopy else {TREE}
    prepared = [
        prep(inst.geometry)
        for inst in instances
        if inst.class_name in classes and inst.score >= confidence_threshold
    ]
    matched = 0
    for x, y in points:
        pt = Point(x, y)
        # intersects = inclusive containment (boundary counts).
        if any(p.intersects(pt) for p in prepared):
            matched += 1
    return matched / len(points), matched


def average_precision_50(predictions, gt_polygons, class_filter: str | None = None,
                         iou_threshold: float = 0.5) -> float:
    """AP at polygon IoU >= 0.5 with 101-point interpolated precision.

    Predictions are greedily matched in descending-score order to the
    unmatched ground truth of highest IoU (COCO convention).
    """
    if class_filter is not None:
        predictions = [p for p in predictions if p.class_name == class_filter]
    if not gt_polygons:
        raise ValueError("no ground truth polygons")
    order = sorted(range(len(predictions)),
                   key=lambda i: (-predictions[i].score, predictions[i].geometry.bounds))
    gt_matched = [False] * len(gt_polygons)
    tp_flags = []
    for idx in order:
        pred = predictions[idx]
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(gt_polygons):
            if gt_matched[j]:
                continue
            iou = polygon_iou(pred.geometry, gt)
            if iou > best_iou:
                best_iou, best_j = iou, j
        if best_j >= 0 and best_iou >= iou_threshold:
            gt_matched[best_j] = True
            tp_flags.append(True)
        else:
            tp_flags.append(False)
    if not tp_flags:
        return 0.0
    tp_cum = np.cumsum(tp_flags)
    n_pred = np.arange(1, len(tp_flags) + 1)
    precision = tp_cum / n_pred
    recall = tp_cum / len(gt_polygons)
    # Precision envelope: max precision at recall >= r.
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    recall_grid = np.linspace(0.0, 1.0, 101)
    # First index with recall >= r; beyond max recall precision is 0.
    idx = np.searchsorted(recall, recall_grid, side="left")
    sampled = np.where(idx < len(recall), envelope[np.minimum(idx, len(recall) - 1)], 0.0)
    return float(sampled.mean())


def evaluation_report(confusion_counts=None, keypoint_results=None,
                      ap50=None, instance_count=None, keypoint_count=None) -> dict:
    """Assemble the JSON-ready evaluation report."""
    report: dict = {}
    if confusion_counts is not None:
        report.update(scores(confusion_counts))
        report["counts"] = {
            "tp": confusion_counts.tp, "fp": confusion_counts.fp,
            "fn": confusion_counts.fn, "tn": confusion_counts.tn,
        }
    if keypoint_results is not None:
        report["keypoint_recall"] = keypoint_results
    if ap50 is not None:
        report["ap50"] = ap50
    if instance_count is not None:
        report["instance_count"] = instance_count
    if keypoint_count is not None:
        report["keypoint_count"] = keypoint_count
    return report
