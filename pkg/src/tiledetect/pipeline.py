"""End-to-end run orchestration: plan, tile, detect, fuse, evaluate.

A run is driven by a PipelineConfig and writes its artifacts into one
output directory:

    plan.json          tile plan
    tiles/*.png        extracted tile rasters (plugin runs, or on request)
    detections.jsonl   per-detector, per-tile boxes in tile coordinates
    fused.json         merged global boxes with source counts
    report.json        metrics (only when annotations are given)
    overlay.png        fused boxes drawn on the image (on request)
    summary.json       machine-readable run summary
    timings.json       wall-clock stage times, diagnostic only

Every artifact except timings.json is byte-deterministic for a given
config and seed: detector streams are keyed by tile id rather than by
execution order, thread pool results are collected positionally, and
JSON is serialized with sorted keys. The worker count changes wall time,
never bytes.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .detector import (
    DetectionSet,
    DetectorSpec,
    TileRasterRef,
    run_plugin,
    synthetic_detect,
)
from .errors import ValidationError
from .evaluation import AnnotationSet, evaluate_detections
from .formats import (
    load_annotations,
    report_to_dict,
    save_detections,
    save_fused,
    save_plan,
    save_report,
    write_json,
)
from .fusion import FusionConfig, ensemble_merge
from .geometry import BBox
from .raster import load_raster, render_overlay, save_png
from .tiling import TilePlan, plan_tiles, remap_to_global, clip_to_image, extract_tile

DEFAULT_SWEEP_SIDES = (320, 640, 1280)


@dataclass(frozen=True)
class PipelineConfig:
    """Everything one run needs.

    Either ``image_path`` or explicit ``width``/``height`` must be given;
    rasterless runs work with synthetic detectors only. Annotations are
    required by synthetic detectors and by evaluation.
    """

    out_dir: str
    image_path: str | None = None
    annotations_path: str | None = None
    width: int | None = None
    height: int | None = None
    side: int = 640
    r: float | None = None
    k: int = 30
    seed: int = 0
    detectors: tuple[DetectorSpec, ...] = (DetectorSpec(name="synthetic"),)
    fusion: FusionConfig = FusionConfig()
    iou_threshold: float = 0.5
    interpolation: str = "all_point"
    workers: int = 0
    save_tiles: bool = False
    overlay: bool = False

    def __post_init__(self) -> None:
        if not self.detectors:
            raise ValidationError("at least one detector is required")
        names = [d.name for d in self.detectors]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate detector names in {names}")
        if self.workers < 0:
            raise ValidationError(f"workers must be >= 0, got {self.workers}")


def _effective_fusion(config: PipelineConfig) -> FusionConfig:
    # Detector weights feed fusion unless the fusion config already pins
    # a weight for that detector name.
    weights = {d.name: d.weight for d in config.detectors}
    if config.fusion.weights:
        weights.update(config.fusion.weights)
    return replace(config.fusion, weights=weights)


def _worker_count(config: PipelineConfig) -> int:
    if config.workers > 0:
        return config.workers
    return os.cpu_count() or 1


def _resolve_frame(
    config: PipelineConfig,
) -> tuple[np.ndarray | None, AnnotationSet | None, int, int, str]:
    """Load raster and annotations, reconcile dimensions, pick an id."""
    raster = None
    if config.image_path is not None:
        raster = load_raster(config.image_path)
    ann = None
    if config.annotations_path is not None:
        ann = load_annotations(config.annotations_path)
    width, height = config.width, config.height
    if raster is not None:
        rh, rw = raster.shape[0], raster.shape[1]
        if width is not None and width != rw or height is not None and height != rh:
            raise ValidationError(
                f"configured size {width}x{height} does not match "
                f"raster {rw}x{rh}"
            )
        width, height = rw, rh
    if ann is not None:
        if width is not None and (width != ann.width or height != ann.height):
            raise ValidationError(
                f"annotations are {ann.width}x{ann.height} but the run frame "
                f"is {width}x{height}"
            )
        if width is None:
            width, height = ann.width, ann.height
    if width is None or height is None:
        raise ValidationError(
            "no image size: give an image, annotations, or width/height"
        )
    if ann is not None and ann.image_id:
        image_id = ann.image_id
    elif config.image_path is not None:
        image_id = Path(config.image_path).stem
    else:
        image_id = f"frame-{width}x{height}"
    return raster, ann, width, height, image_id


def _detect_all(
    config: PipelineConfig,
    plan: TilePlan,
    ann: AnnotationSet | None,
    refs: Sequence[TileRasterRef] | None,
    workers: int,
) -> list[tuple[DetectorSpec, list[DetectionSet]]]:
    """Run every configured detector over every tile (local frame).

    Synthetic detectors fan out over a thread pool; results are collected
    positionally (tile order), so the worker count cannot change output.
    """
    out: list[tuple[DetectorSpec, list[DetectionSet]]] = []
    for spec in config.detectors:
        if spec.kind == "synthetic":
            if ann is None:
                raise ValidationError(
                    f"synthetic detector {spec.name!r} needs annotations"
                )
            boxes = ann.boxes
            with ThreadPoolExecutor(max_workers=workers) as pool:
                sets = list(
                    pool.map(
                        lambda t: synthetic_detect(boxes, t, spec.profile, spec.name),
                        plan.tiles,
                    )
                )
        else:
            if refs is None:
                raise ValidationError(
                    f"plugin detector {spec.name!r} requires an image raster"
                )
            sets = run_plugin(spec, refs)
        out.append((spec, sets))
    return out


def _to_global(
    plan: TilePlan, sets: Sequence[DetectionSet], width: int, height: int
) -> list[BBox]:
    """Remap local detections to image coordinates, clipped to the image."""
    by_id = {t.tile_id: t for t in plan.tiles}
    out: list[BBox] = []
    for ds in sets:
        tile = by_id.get(ds.tile_id)
        if tile is None:
            raise ValidationError(f"detections reference unknown tile {ds.tile_id}")
        for b in ds.boxes:
            g = remap_to_global(b, tile)
            clipped = clip_to_image(g, width, height)
            if clipped is not None:
                out.append(clipped)
    return out


def run_pipeline(config: PipelineConfig) -> dict:
    """Execute one full run and write all artifacts into out_dir.

    Returns the summary dictionary (the same content as summary.json).
    """
    timings: dict[str, float] = {}
    t_start = time.perf_counter()
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    workers = _worker_count(config)

    raster, ann, width, height, image_id = _resolve_frame(config)

    t0 = time.perf_counter()
    plan = plan_tiles(width, height, config.side, config.r, config.k, config.seed)
    save_plan(plan, out_dir / "plan.json")
    timings["plan"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    needs_rasters = config.save_tiles or any(
        d.kind == "plugin" for d in config.detectors
    )
    refs: list[TileRasterRef] | None = None
    if needs_rasters:
        if raster is None:
            raise ValidationError("tile rasters requested but no image was given")
        tiles_dir = out_dir / "tiles"
        tiles_dir.mkdir(exist_ok=True)
        refs = [
            TileRasterRef(t.tile_id, t.side, str(tiles_dir / f"tile_{t.tile_id:06d}.png"))
            for t in plan.tiles
        ]
        frame = raster

        def write_tile(pair: tuple) -> None:
            tile, ref = pair
            save_png(extract_tile(frame, tile), ref.raster_path)

        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(write_tile, zip(plan.tiles, refs)))
    timings["tiles"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    detected = _detect_all(config, plan, ann, refs, workers)
    all_sets = [ds for _, sets in detected for ds in sets]
    save_detections(all_sets, out_dir / "detections.jsonl")
    timings["detect"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    pooled: dict[str, list[BBox]] = {
        spec.name: _to_global(plan, sets, width, height) for spec, sets in detected
    }
    fused = ensemble_merge(pooled, _effective_fusion(config))
    save_fused(fused, out_dir / "fused.json")
    timings["fuse"] = time.perf_counter() - t0

    report = None
    if ann is not None:
        t0 = time.perf_counter()
        report = evaluate_detections(
            list(fused.boxes), ann, config.iou_threshold, config.interpolation
        )
        save_report(report, out_dir / "report.json")
        timings["eval"] = time.perf_counter() - t0

    if config.overlay:
        if raster is None:
            raise ValidationError("overlay requested but no image was given")
        save_png(render_overlay(raster, fused.boxes), out_dir / "overlay.png")

    summary = {
        "image_id": image_id,
        "width": width,
        "height": height,
        "side": config.side,
        "r": plan.r,
        "seed": config.seed,
        "tiles": len(plan.tiles),
        "poisson_tiles": sum(1 for t in plan.tiles if t.provenance == "poisson"),
        "fallback_tiles": sum(1 for t in plan.tiles if t.provenance == "fallback"),
        "coverage": plan.coverage,
        "detections": {
            spec.name: sum(len(ds.boxes) for ds in sets) for spec, sets in detected
        },
        "fused_boxes": len(fused.boxes),
        "report": report_to_dict(report) if report is not None else None,
    }
    write_json(summary, out_dir / "summary.json")
    timings["total"] = time.perf_counter() - t_start
    write_json({"seconds": timings, "workers": workers}, out_dir / "timings.json")
    return summary


def run_sweep(
    config: PipelineConfig, sides: Sequence[int] = DEFAULT_SWEEP_SIDES
) -> dict:
    """Run the pipeline once per tile side, each into its own directory.

    The per-side runs use ``r = side / 2`` (the default spacing) unless
    the config pins ``r`` explicitly. Writes sweep_summary.json in the
    root output directory and returns its content.
    """
    if not sides:
        raise ValidationError("sweep needs at least one tile side")
    root = Path(config.out_dir)
    root.mkdir(parents=True, exist_ok=True)
    runs = []
    for side in sides:
        sub = root / f"side_{side:04d}"
        sub_config = replace(config, side=side, out_dir=str(sub))
        summary = run_pipeline(sub_config)
        runs.append(
            {
                "side": side,
                "out_dir": sub.name,
                "tiles": summary["tiles"],
                "fused_boxes": summary["fused_boxes"],
                "report": summary["report"],
            }
        )
    sweep = {"sides": list(sides), "runs": runs}
    write_json(sweep, root / "sweep_summary.json")
    return sweep
