"""``tcd`` command line: predict, evaluate, report and dataset tooling.

Every command finishes by printing a machine-readable JSON footer on
stdout listing its output paths.  Exit codes: 0 success, 1 validation
error, 2 runtime error.
"""

from __future__ import annotations

import json
import os
import sys

import click
import numpy as np

from .config import RunConfig, load_config
from .georaster import RasterFormatError, full_window
from .geotiff import GeoTiffSink, open_raster, write_geotiff
from .merge import MergeConfig, filter_by_semantic, write_vector
from .metrics import (
    average_precision_50,
    confusion_streamed,
    evaluation_report,
    keypoint_recall,
    scores,
)
from .pipeline import predict_instances_tiled
from .predictors import PredictorDescriptor, build_predictor
from .stitch import StitchConfig, binarize, canopy_cover, roi_to_pixel_rings, stitch_semantic
from .vectors import read_instances, read_points, read_polygons


def _footer(outputs: dict, extra: dict | None = None) -> None:
    doc = {"outputs": outputs}
    if extra:
        doc.update(extra)
    click.echo(json.dumps(doc, sort_keys=True))


def _stitch_config(cfg: RunConfig) -> StitchConfig:
    return StitchConfig(
        tile_size=cfg.tile_size, overlap=cfg.overlap, batch_size=cfg.batch_size,
        skip_empty=cfg.skip_empty, threshold=cfg.threshold, workers=cfg.workers,
        nodata_skip=cfg.nodata_skip,
    )


def _merge_config(cfg: RunConfig) -> MergeConfig:
    return MergeConfig(
        nms_iou=cfg.nms_iou, merge_iou=cfg.merge_iou,
        confidence_threshold=cfg.confidence,
        semantic_filter_fraction=cfg.semantic_fraction,
    )


config_option = click.option("--config", "config_path", type=click.Path(exists=True),
                             default=None, help="key = value config file")


@click.group()
def cli():
    """Tree canopy mapping over large orthomosaics."""


@cli.group()
def predict():
    """Run tiled prediction."""


@predict.command("semantic")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--model", "model_desc", required=True)
@click.option("--output", "output_dir", required=True, type=click.Path())
@config_option
@click.option("--tile-size", type=int, default=None)
@click.option("--overlap", type=int, default=None)
@click.option("--threshold", type=float, default=None)
@click.option("--workers", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--roi", "roi_path", type=click.Path(exists=True), default=None)
def predict_semantic_cmd(input_path, model_desc, output_dir, config_path,
                         tile_size, overlap, threshold, workers, batch_size, roi_path):
    """Stitched semantic prediction -> confidence + mask GeoTIFFs."""
    cfg = load_config(config_path, {
        "tile_size": tile_size, "overlap": overlap, "threshold": threshold,
        "workers": workers, "batch_size": batch_size,
    })
    desc = PredictorDescriptor.parse(model_desc)
    os.makedirs(output_dir, exist_ok=True)
    conf_path = os.path.join(output_dir, "confidence.tif")
    mask_path = os.path.join(output_dir, "mask.tif")
    summary_path = os.path.join(output_dir, "summary.json")

    src = open_raster(input_path)
    predictor = build_predictor(desc)
    try:
        sink = GeoTiffSink(conf_path, src.width, src.height, 1, "f32",
                           src.geotransform)
        with sink:
            summary = stitch_semantic(src, predictor, _stitch_config(cfg), sink)
    finally:
        predictor.close()

    conf_src = open_raster(conf_path)
    mask_sink = GeoTiffSink(mask_path, src.width, src.height, 1, "u8",
                            src.geotransform)
    with mask_sink:
        binarize(conf_src, cfg.threshold, mask_sink)
    conf_src.close()

    roi = read_polygons(roi_path) if roi_path else None
    mask_src = open_raster(mask_path)
    fraction, covered, total = canopy_cover(mask_src, roi)
    mask_src.close()

    doc = {
        "run": summary.to_dict(),
        "threshold": cfg.threshold,
        "canopy_cover": {"fraction": fraction, "covered_px": covered, "total_px": total},
    }
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
    _footer({"confidence": conf_path, "mask": mask_path, "summary": summary_path})


@predict.command("instance")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--model", "model_desc", required=True)
@click.option("--output", "output_path", required=True, type=click.Path())
@config_option
@click.option("--tile-size", type=int, default=None)
@click.option("--overlap", type=int, default=None)
@click.option("--confidence", type=float, default=None)
@click.option("--nms-iou", type=float, default=None)
@click.option("--merge-iou", type=float, default=None)
@click.option("--workers", type=int, default=None)
@click.option("--semantic-mask", "semantic_mask", type=click.Path(exists=True), default=None)
@click.option("--semantic-fraction", type=float, default=None)
@click.option("--roi", "roi_path", type=click.Path(exists=True), default=None)
def predict_instance_cmd(input_path, model_desc, output_path, config_path,
                         tile_size, overlap, confidence, nms_iou, merge_iou,
                         workers, semantic_mask, semantic_fraction, roi_path):
    """Tiled instance prediction -> merged GeoJSON FeatureCollection."""
    cfg = load_config(config_path, {
        "tile_size": tile_size, "overlap": overlap, "confidence": confidence,
        "nms_iou": nms_iou, "merge_iou": merge_iou, "workers": workers,
        "semantic_fraction": semantic_fraction,
    })
    desc = PredictorDescriptor.parse(model_desc)
    src = open_raster(input_path)
    predictor = build_predictor(desc)
    try:
        instances, summary, stats = predict_instances_tiled(
            src, predictor, _stitch_config(cfg), _merge_config(cfg)
        )
    finally:
        predictor.close()

    if semantic_mask:
        mask_src = open_raster(semantic_mask)
        instances = filter_by_semantic(instances, mask_src, cfg.semantic_fraction,
                                       src.geotransform.crs_code)
        mask_src.close()
    if roi_path:
        from shapely.ops import unary_union

        roi = unary_union(read_polygons(roi_path))
        instances = [i for i in instances if i.geometry.intersects(roi)]

    count = write_vector(instances, output_path, src.geotransform.crs_code)
    summary_path = output_path + ".summary.json"
    by_class: dict = {}
    for inst in instances:
        by_class[inst.class_name] = by_class.get(inst.class_name, 0) + 1
    doc = {
        "run": summary.to_dict(),
        "instances": count,
        "instances_by_class": by_class,
        "dropped_invalid": stats.dropped_invalid,
        "dropped_boundary": stats.dropped_boundary,
    }
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
    _footer({"instances": output_path, "summary": summary_path})


@cli.group()
def evaluate():
    """Compare predictions against ground truth."""


@evaluate.command("semantic")
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True))
@click.option("--truth", "truth_path", required=True, type=click.Path(exists=True))
@click.option("--truth-kind", type=click.Choice(["mask", "chm"]), default="mask")
@click.option("--height-threshold", type=float, default=None)
@click.option("--threshold", type=float, default=None, help="binarize f32 predictions")
@click.option("--roi", "roi_path", type=click.Path(exists=True), default=None)
@config_option
def evaluate_semantic_cmd(pred_path, truth_path, truth_kind, height_threshold,
                          threshold, roi_path, config_path):
    """Pixel IoU / F1 / accuracy of a mask against a mask or CHM."""
    cfg = load_config(config_path, {
        "height_threshold": height_threshold, "threshold": threshold,
    })
    pred_src = open_raster(pred_path)
    truth_src = open_raster(truth_path)

    from .georaster import MemoryRaster
    from .metrics import chm_to_mask

    if truth_kind == "chm":
        truth_mask = MemoryRaster.from_array(
            chm_to_mask(truth_src, cfg.height_threshold),
            truth_src.geotransform,
        )
    else:
        truth_mask = truth_src
    if pred_src.dtype == "f32":
        full = pred_src.read_window(full_window(pred_src))
        pred_mask = MemoryRaster.from_array(
            (full[:, :, 0] >= cfg.threshold).astype(np.uint8), pred_src.geotransform
        )
    else:
        pred_mask = pred_src

    roi_rings = None
    if roi_path:
        roi_rings = roi_to_pixel_rings(read_polygons(roi_path), pred_src.geotransform)
    counts = confusion_streamed(pred_mask, truth_mask, roi_rings)
    report = evaluation_report(confusion_counts=counts)
    click.echo(json.dumps(report, sort_keys=True))
    click.echo(_metric_table(report), err=True)
    _footer({}, {"report": report})


def _metric_table(report: dict) -> str:
    lines = ["metric      value", "-----------------"]
    for key in ("iou", "f1", "accuracy", "ap50"):
        if key in report:
            lines.append(f"{key:<10}  {report[key]:.4f}")
    if "keypoint_recall" in report:
        for name, value in report["keypoint_recall"].items():
            lines.append(f"{name:<10}  {value:.4f}")
    return "\n".join(lines)


@evaluate.command("instance")
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True))
@click.option("--truth", "truth_path", required=True, type=click.Path(exists=True))
@click.option("--mode", type=click.Choice(["recall", "ap50"]), required=True)
@click.option("--confidence", type=float, default=0.0)
def evaluate_instance_cmd(pred_path, truth_path, mode, confidence):
    """Keypoint recall or AP50 of predicted instances."""
    predictions = read_instances(pred_path)
    if mode == "recall":
        points = read_points(truth_path)
        tree_recall, tree_matched = keypoint_recall(points, predictions, False, confidence)
        both_recall, both_matched = keypoint_recall(points, predictions, True, confidence)
        report = evaluation_report(
            keypoint_results={"tree_only": tree_recall, "tree_and_canopy": both_recall},
            instance_count=len(predictions), keypoint_count=len(points),
        )
    else:
        from .dataset import coco_annotation_polygon, parse_coco
        from .predictors import CANOPY, TREE

        if truth_path.endswith(".json") and not truth_path.endswith(".geojson"):
            doc = parse_coco(truth_path)
            cat_names = {c["id"]: c["name"] for c in doc["categories"]}
            truth_by_class: dict = {}
            for ann in doc["annotations"]:
                truth_by_class.setdefault(cat_names[ann["category_id"]], []).append(
                    coco_annotation_polygon(ann)
                )
        else:
            truth_by_class = {TREE: [i.geometry for i in read_instances(truth_path)
                                     if i.class_name == TREE],
                              CANOPY: [i.geometry for i in read_instances(truth_path)
                                       if i.class_name == CANOPY]}
            truth_by_class = {k: v for k, v in truth_by_class.items() if v}
        aps = [
            average_precision_50(predictions, polys, class_filter=name)
            for name, polys in sorted(truth_by_class.items())
        ]
        if not aps:
            raise ValueError("no ground truth polygons")
        report = evaluation_report(ap50=sum(aps) / len(aps),
                                   instance_count=len(predictions))
    click.echo(json.dumps(report, sort_keys=True))
    click.echo(_metric_table(report), err=True)
    _footer({}, {"report": report})


@cli.command("report")
@click.option("--results", "results_dir", required=True, type=click.Path(exists=True))
@click.option("--roi", "roi_path", type=click.Path(exists=True), default=None)
def report_cmd(results_dir, roi_path):
    """Summarize a prediction run: cover, counts, score histogram."""
    mask_path = os.path.join(results_dir, "mask.tif")
    summary_path = os.path.join(results_dir, "summary.json")
    geojsons = sorted(
        f for f in os.listdir(results_dir) if f.endswith(".geojson")
    )
    if not os.path.exists(mask_path) and not geojsons:
        raise ValueError(f"no predict outputs found in {results_dir}")

    doc: dict = {"canopy_cover": None, "instances": None}
    roi = read_polygons(roi_path) if roi_path else None
    if os.path.exists(mask_path):
        mask_src = open_raster(mask_path)
        fraction, covered, total = canopy_cover(mask_src, roi)
        mask_src.close()
        doc["canopy_cover"] = {
            "fraction": fraction, "covered_px": covered, "total_px": total,
        }
    if geojsons:
        instances = read_instances(os.path.join(results_dir, geojsons[0]))
        if roi:
            from shapely.ops import unary_union

            roi_geom = unary_union(roi)
            instances = [i for i in instances if i.geometry.intersects(roi_geom)]
        by_class: dict = {}
        for inst in instances:
            by_class[inst.class_name] = by_class.get(inst.class_name, 0) + 1
        edges = [i / 10 for i in range(11)]
        hist = [0] * 10
        for inst in instances:
            hist[min(int(inst.score * 10), 9)] += 1
        doc["instances"] = {
            "total": len(instances),
            "by_class": by_class,
            "score_histogram": {"edges": edges, "counts": hist},
        }
    if os.path.exists(summary_path):
        with open(summary_path, "r", encoding="utf-8") as fh:
            doc["run"] = json.load(fh).get("run")

    report_path = os.path.join(results_dir, "report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
    lines = []
    if doc["canopy_cover"]:
        lines.append(f"canopy cover: {doc['canopy_cover']['fraction']:.4f}")
    if doc["instances"]:
        for name, n in sorted(doc["instances"]["by_class"].items()):
            lines.append(f"{name} count: {n}")
    if doc.get("run") and doc["run"].get("failed_tiles"):
        lines.append(f"failed tiles: {doc['run']['failed_tiles']}")
    click.echo("\n".join(lines), err=True)
    _footer({"report": report_path})


@cli.group()
def dataset():
    """Dataset split / export / rasterization tooling."""


@dataset.command("split")
@click.option("--metadata", "metadata_path", required=True, type=click.Path(exists=True))
@click.option("--biomes", "biomes_path", type=click.Path(exists=True), default=None)
@click.option("--k", type=int, default=5)
@click.option("--holdout", "holdout_frac", type=float, default=0.10)
@click.option("--seed", type=int, default=42)
@click.option("--out", "out_path", required=True, type=click.Path())
def dataset_split_cmd(metadata_path, biomes_path, k, holdout_frac, seed, out_path):
    """Biome-stratified, license-aware, leakage-free splits."""
    from .dataset import assign_biome, make_splits, read_metadata_jsonl, splits_to_json

    records = read_metadata_jsonl(metadata_path)
    if biomes_path:
        biome_polygons = _read_biome_polygons(biomes_path)
        for rec in records:
            if rec.biome == -1 and rec.footprint is not None:
                rec.biome = assign_biome(rec.footprint, biome_polygons)
    assignment = make_splits(records, k=k, holdout_frac=holdout_frac, seed=seed)
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(splits_to_json(assignment))
    _footer({"splits": out_path})


def _read_biome_polygons(path) -> dict:
    from shapely.geometry import shape

    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    out = {}
    for feature in obj.get("features", []):
        biome_id = int(feature.get("properties", {}).get("biome"))
        geom = shape(feature["geometry"])
        out[biome_id] = geom if biome_id not in out else out[biome_id].union(geom)
    return out


@dataset.command("export-coco")
@click.option("--metadata", "metadata_path", required=True, type=click.Path(exists=True))
@click.option("--annotations", "annotations_path", required=True, type=click.Path(exists=True))
@click.option("--splits", "splits_path", type=click.Path(exists=True), default=None)
@click.option("--split", "which", default=None,
              help="holdout, train, or fold index to export")
@click.option("--out", "out_path", required=True, type=click.Path())
def dataset_export_coco_cmd(metadata_path, annotations_path, splits_path, which, out_path):
    """Re-export a COCO file restricted to one split."""
    from .dataset import (
        AnnotationRecord,
        export_coco,
        parse_coco,
        read_metadata_jsonl,
    )

    records = read_metadata_jsonl(metadata_path)
    if splits_path and which is not None:
        with open(splits_path, "r", encoding="utf-8") as fh:
            splits = json.load(fh)["sources"]
        if which in ("holdout", "train"):
            keep = {oid for oid, s in splits.items() if s["split"] == which}
        else:
            keep = {oid for oid, s in splits.items() if s["fold"] == int(which)}
        records = [r for r in records if r.oam_id in keep]

    doc = parse_coco(annotations_path)
    known_tiles = {t for r in records for t in r.tile_ids}
    image_tile = {}
    for img in doc["images"]:
        tile_id = os.path.splitext(img["file_name"])[0]
        image_tile[img["id"]] = tile_id
    cat_names = {c["id"]: c["name"] for c in doc["categories"]}
    annotations = []
    for ann in doc["annotations"]:
        tile_id = image_tile.get(ann["image_id"])
        if tile_id not in known_tiles:
            continue
        rings = [
            [(flat[i], flat[i + 1]) for i in range(0, len(flat), 2)]
            for flat in ann["segmentation"]
        ]
        annotations.append(AnnotationRecord(ann["id"], tile_id,
                                            cat_names[ann["category_id"]], rings))
    export_coco(records, annotations, out_path)
    _footer({"coco": out_path})


@dataset.command("rasterize")
@click.option("--annotations", "annotations_path", required=True, type=click.Path(exists=True))
@click.option("--image-id", type=int, required=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def dataset_rasterize_cmd(annotations_path, image_id, out_path):
    """Rasterize one COCO image's annotations to a binary mask GeoTIFF."""
    from .dataset import AnnotationRecord, parse_coco, rasterize_annotations

    doc = parse_coco(annotations_path)
    image = next((i for i in doc["images"] if i["id"] == image_id), None)
    if image is None:
        raise ValueError(f"image id {image_id} not present in {annotations_path}")
    cat_names = {c["id"]: c["name"] for c in doc["categories"]}
    annotations = []
    for ann in doc["annotations"]:
        if ann["image_id"] != image_id:
            continue
        rings = [
            [(flat[i], flat[i + 1]) for i in range(0, len(flat), 2)]
            for flat in ann["segmentation"]
        ]
        annotations.append(AnnotationRecord(ann["id"], "t", cat_names[ann["category_id"]], rings))
    mask = rasterize_annotations(annotations, (image["width"], image["height"]))
    write_geotiff(out_path, mask)
    _footer({"mask": out_path})


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.UsageError as exc:
        click.echo(exc.format_message(), err=True)
        if exc.ctx is not None:
            click.echo(exc.ctx.get_usage(), err=True)
        return 1
    except click.Abort:
        return 1
    except (ValueError, RasterFormatError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except Exception as exc:  # runtime failures (I/O, predictor death...)
        click.echo(f"runtime error: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
