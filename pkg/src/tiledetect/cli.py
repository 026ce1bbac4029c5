"""Command line interface.

Subcommands cover each pipeline stage (plan, tile, detect, fuse, eval),
synthetic data tooling (synth scene/crops/mix), and the one-shot
``pipeline`` runner with an optional tile-size sweep.

Exit codes: 0 success, 2 invalid input or configuration, 3 detector
plugin failure, 4 file I/O failure. Errors are reported as one JSON line
on stderr: {"error": <type>, "message": <text>}.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .detector import (
    DEFAULT_VISIBILITY,
    DetectorSpec,
    NoiseProfile,
    ScoreModel,
    TileRasterRef,
    run_plugin,
    synthetic_detect,
)
from .errors import PluginError, RasterIOError, ValidationError
from .evaluation import evaluate_detections
from .formats import (
    load_annotations,
    load_detections,
    load_fused,
    load_plan,
    save_annotations,
    save_detections,
    save_fused,
    save_plan,
    save_report,
    save_yolo_labels,
    write_json,
)
from .fusion import FusionConfig, ensemble_merge
from .geometry import BBox
from .pipeline import (
    DEFAULT_SWEEP_SIDES,
    PipelineConfig,
    run_pipeline,
    run_sweep,
)
from .raster import load_raster, render_overlay, save_png
from .synthgen import (
    generate_annotations,
    generate_scene,
    mix_datasets,
    sample_crops,
    save_manifest,
)
from .tiling import clip_to_image, extract_tile, plan_tiles, remap_to_global


def _check_keys(obj: dict, allowed: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ValidationError(f"{where}: unknown keys {sorted(unknown)}")


def _profile_from_dict(obj: dict, where: str) -> NoiseProfile:
    _check_keys(
        obj,
        {
            "jitter_sigma",
            "miss_rate",
            "spurious_rate",
            "scale_floor",
            "visibility",
            "score_model",
            "seed",
        },
        where,
    )
    sm = obj.get("score_model", {})
    if not isinstance(sm, dict):
        raise ValidationError(f"{where}: score_model must be an object")
    _check_keys(
        sm, {"true_mean", "true_sigma", "spurious_mean", "spurious_sigma"},
        f"{where}.score_model",
    )
    return NoiseProfile(
        jitter_sigma=float(obj.get("jitter_sigma", 0.0)),
        miss_rate=float(obj.get("miss_rate", 0.0)),
        spurious_rate=float(obj.get("spurious_rate", 0.0)),
        scale_floor=float(obj.get("scale_floor", 0.0)),
        visibility=float(obj.get("visibility", DEFAULT_VISIBILITY)),
        score_model=ScoreModel(
            true_mean=float(sm.get("true_mean", 0.8)),
            true_sigma=float(sm.get("true_sigma", 0.1)),
            spurious_mean=float(sm.get("spurious_mean", 0.3)),
            spurious_sigma=float(sm.get("spurious_sigma", 0.1)),
        ),
        seed=int(obj.get("seed", 0)),
    )


def _detector_from_dict(obj: object, where: str) -> DetectorSpec:
    if not isinstance(obj, dict):
        raise ValidationError(f"{where}: detector must be an object")
    _check_keys(obj, {"name", "kind", "weight", "profile", "command"}, where)
    if "name" not in obj:
        raise ValidationError(f"{where}: detector needs a name")
    kind = str(obj.get("kind", "synthetic"))
    profile = NoiseProfile()
    if "profile" in obj:
        if not isinstance(obj["profile"], dict):
            raise ValidationError(f"{where}: profile must be an object")
        profile = _profile_from_dict(obj["profile"], f"{where}.profile")
    command: tuple[str, ...] = ()
    if "command" in obj:
        if not isinstance(obj["command"], list) or not all(
            isinstance(c, str) for c in obj["command"]
        ):
            raise ValidationError(f"{where}: command must be a list of strings")
        command = tuple(obj["command"])
    return DetectorSpec(
        name=str(obj["name"]),
        kind=kind,
        profile=profile,
        command=command,
        weight=float(obj.get("weight", 1.0)),
    )


def _fusion_from_dict(obj: dict, where: str) -> FusionConfig:
    _check_keys(
        obj,
        {
            "score_threshold",
            "suppression_iou",
            "suppression_metric",
            "eiou_threshold",
            "eiou_rescoring",
            "coordinate_fusion",
            "class_agnostic",
            "weights",
        },
        where,
    )
    weights = obj.get("weights")
    if weights is not None:
        if not isinstance(weights, dict):
            raise ValidationError(f"{where}: weights must be an object")
        weights = {str(k): float(v) for k, v in weights.items()}
    return FusionConfig(
        score_threshold=float(obj.get("score_threshold", 0.25)),
        suppression_iou=float(obj.get("suppression_iou", 0.5)),
        suppression_metric=str(obj.get("suppression_metric", "iou")),
        eiou_threshold=float(obj.get("eiou_threshold", 0.5)),
        eiou_rescoring=bool(obj.get("eiou_rescoring", True)),
        coordinate_fusion=bool(obj.get("coordinate_fusion", False)),
        class_agnostic=bool(obj.get("class_agnostic", False)),
        weights=weights,
    )


def _pipeline_config_from_file(path: str, args: argparse.Namespace) -> PipelineConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    _check_keys(
        data,
        {
            "image",
            "annotations",
            "width",
            "height",
            "side",
            "r",
            "k",
            "seed",
            "detectors",
            "fusion",
            "eval",
            "workers",
            "save_tiles",
            "overlay",
            "out_dir",
        },
        path,
    )
    base = Path(path).parent

    def rel(p: object) -> str:
        return str((base / str(p)).resolve()) if p is not None else None  # type: ignore[return-value]

    detectors: tuple[DetectorSpec, ...] = (DetectorSpec(name="synthetic"),)
    if "detectors" in data:
        if not isinstance(data["detectors"], list) or not data["detectors"]:
            raise ValidationError(f"{path}: detectors must be a non-empty list")
        detectors = tuple(
            _detector_from_dict(d, f"{path}: detectors[{i}]")
            for i, d in enumerate(data["detectors"])
        )
    fusion = FusionConfig()
    if "fusion" in data:
        if not isinstance(data["fusion"], dict):
            raise ValidationError(f"{path}: fusion must be an object")
        fusion = _fusion_from_dict(data["fusion"], f"{path}: fusion")
    iou_threshold, interpolation = 0.5, "all_point"
    if "eval" in data:
        ev = data["eval"]
        if not isinstance(ev, dict):
            raise ValidationError(f"{path}: eval must be an object")
        _check_keys(ev, {"iou_threshold", "interpolation"}, f"{path}: eval")
        iou_threshold = float(ev.get("iou_threshold", 0.5))
        interpolation = str(ev.get("interpolation", "all_point"))

    out_dir = args.out_dir or data.get("out_dir")
    if out_dir is None:
        raise ValidationError("no output directory: pass --out-dir or set out_dir")
    return PipelineConfig(
        out_dir=str(out_dir),
        image_path=rel(data.get("image")),
        annotations_path=rel(data.get("annotations")),
        width=int(data["width"]) if data.get("width") is not None else None,
        height=int(data["height"]) if data.get("height") is not None else None,
        side=args.side if args.side is not None else int(data.get("side", 640)),
        r=float(data["r"]) if data.get("r") is not None else None,
        k=int(data.get("k", 30)),
        seed=args.seed if args.seed is not None else int(data.get("seed", 0)),
        detectors=detectors,
        fusion=fusion,
        iou_threshold=iou_threshold,
        interpolation=interpolation,
        workers=args.workers if args.workers is not None else int(data.get("workers", 0)),
        save_tiles=bool(args.save_tiles or data.get("save_tiles", False)),
        overlay=bool(args.overlay or data.get("overlay", False)),
    )


def _load_detector_file(path: str) -> tuple[DetectorSpec, ...]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc}") from exc
    if isinstance(data, dict):
        data = [data]
    if not isinstance(data, list) or not data:
        raise ValidationError(f"{path}: expected a detector object or list")
    return tuple(
        _detector_from_dict(d, f"{path}[{i}]") for i, d in enumerate(data)
    )


def _frame_size(args: argparse.Namespace) -> tuple[int, int]:
    if args.image:
        raster = load_raster(args.image)
        return raster.shape[1], raster.shape[0]
    if args.width is None or args.height is None:
        raise ValidationError("give --image or both --width and --height")
    return args.width, args.height


def cmd_plan(args: argparse.Namespace) -> int:
    width, height = _frame_size(args)
    plan = plan_tiles(width, height, args.side, args.r, args.k, args.seed)
    save_plan(plan, args.out)
    fallback = sum(1 for t in plan.tiles if t.provenance == "fallback")
    print(
        f"planned {len(plan.tiles)} tiles ({fallback} fallback) over "
        f"{width}x{height}, coverage {plan.coverage}, wrote {args.out}"
    )
    return 0


def cmd_tile(args: argparse.Namespace) -> int:
    raster = load_raster(args.image)
    plan = load_plan(args.plan)
    if raster.shape[1] != plan.image_width or raster.shape[0] != plan.image_height:
        raise ValidationError(
            f"plan is for {plan.image_width}x{plan.image_height} but image is "
            f"{raster.shape[1]}x{raster.shape[0]}"
        )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    refs = []
    for tile in plan.tiles:
        ref_path = out_dir / f"tile_{tile.tile_id:06d}.png"
        save_png(extract_tile(raster, tile), ref_path)
        refs.append(
            {"tile_id": tile.tile_id, "side": tile.side, "raster": str(ref_path)}
        )
    with open(out_dir / "tiles.jsonl", "w", encoding="utf-8") as fh:
        for ref in refs:
            fh.write(json.dumps(ref, sort_keys=True) + "\n")
    print(f"wrote {len(refs)} tile rasters to {out_dir}")
    return 0


def cmd_detect(args: argparse.Namespace) -> int:
    plan = load_plan(args.plan)
    detectors = (
        _load_detector_file(args.detectors)
        if args.detectors
        else (DetectorSpec(name="synthetic"),)
    )
    ann = load_annotations(args.gt) if args.gt else None
    refs = None
    if args.tiles_dir:
        refs = [
            TileRasterRef(
                t.tile_id,
                t.side,
                str(Path(args.tiles_dir) / f"tile_{t.tile_id:06d}.png"),
            )
            for t in plan.tiles
        ]
    all_sets = []
    for spec in detectors:
        if spec.kind == "synthetic":
            if ann is None:
                raise ValidationError(
                    f"synthetic detector {spec.name!r} needs --gt annotations"
                )
            for tile in plan.tiles:
                all_sets.append(synthetic_detect(ann.boxes, tile, spec.profile, spec.name))
        else:
            if refs is None:
                raise ValidationError(
                    f"plugin detector {spec.name!r} needs --tiles-dir"
                )
            all_sets.extend(run_plugin(spec, refs))
    save_detections(all_sets, args.out)
    total = sum(len(s.boxes) for s in all_sets)
    print(f"{total} detections from {len(detectors)} detector(s), wrote {args.out}")
    return 0


def _fusion_from_args(args: argparse.Namespace) -> FusionConfig:
    weights = None
    if args.weight:
        weights = {}
        for item in args.weight:
            name, _, value = item.partition("=")
            if not name or not value:
                raise ValidationError(f"--weight expects NAME=FLOAT, got {item!r}")
            weights[name] = float(value)
    return FusionConfig(
        score_threshold=args.score_threshold,
        suppression_iou=args.suppression_iou,
        suppression_metric=args.suppression_metric,
        eiou_threshold=args.eiou_threshold,
        eiou_rescoring=not args.no_eiou_rescoring,
        coordinate_fusion=args.coordinate_fusion,
        class_agnostic=args.class_agnostic,
        weights=weights,
    )


def cmd_fuse(args: argparse.Namespace) -> int:
    plan = load_plan(args.plan)
    sets = load_detections(args.detections)
    by_tile = {t.tile_id: t for t in plan.tiles}
    pooled: dict[str, list[BBox]] = {}
    for ds in sets:
        boxes = pooled.setdefault(ds.detector_name, [])
        for b in ds.boxes:
            if ds.frame == "local":
                tile = by_tile.get(ds.tile_id)
                if tile is None:
                    raise ValidationError(
                        f"{args.detections}: unknown tile id {ds.tile_id}"
                    )
                b = remap_to_global(b, tile)
            clipped = clip_to_image(b, plan.image_width, plan.image_height)
            if clipped is not None:
                boxes.append(clipped)
    fused = ensemble_merge(pooled, _fusion_from_args(args))
    save_fused(fused, args.out)
    print(
        f"fused {sum(len(v) for v in pooled.values())} detections into "
        f"{len(fused.boxes)} boxes, wrote {args.out}"
    )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    fused = load_fused(args.fused)
    ann = load_annotations(args.gt)
    report = evaluate_detections(
        list(fused.boxes), ann, args.iou_threshold, args.interpolation
    )
    save_report(report, args.out)
    map_text = "n/a" if report.mean_ap is None else f"{report.mean_ap:.4f}"
    print(
        f"P {report.precision:.4f}  R {report.recall:.4f}  F1 {report.f1:.4f}  "
        f"acc {report.accuracy:.4f}  mAP {map_text}, wrote {args.out}"
    )
    return 0


def cmd_synth_scene(args: argparse.Namespace) -> int:
    ann = generate_annotations(
        args.width,
        args.height,
        args.count,
        args.min_size,
        args.max_size,
        num_classes=args.classes,
        seed=args.seed,
        min_gap=args.min_gap,
    )
    save_annotations(ann, args.gt_out)
    if args.image_out:
        save_png(generate_scene(args.width, args.height, ann, args.seed), args.image_out)
        print(f"wrote {args.image_out} and {args.gt_out} ({len(ann.boxes)} boxes)")
    else:
        print(f"wrote {args.gt_out} ({len(ann.boxes)} boxes)")
    return 0


def cmd_synth_crops(args: argparse.Namespace) -> int:
    raster = load_raster(args.image)
    ann = load_annotations(args.gt)
    crops = sample_crops(
        raster, ann, args.side, args.count, args.seed, args.min_visibility
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index = []
    for i, (crop, labels) in enumerate(crops):
        stem = f"crop_{i:04d}"
        save_png(crop, out_dir / f"{stem}.png")
        save_annotations(labels, out_dir / f"{stem}.json")
        if args.yolo:
            save_yolo_labels(labels.boxes, out_dir / f"{stem}.txt", args.side, args.side)
        index.append({"crop": f"{stem}.png", "boxes": len(labels.boxes)})
    with open(out_dir / "index.jsonl", "w", encoding="utf-8") as fh:
        for row in index:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    print(f"wrote {len(crops)} crops to {out_dir}")
    return 0


def _read_lines(path: str) -> list[str]:
    with open(path, "r", encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


def cmd_synth_mix(args: argparse.Namespace) -> int:
    manifest = mix_datasets(
        _read_lines(args.original),
        _read_lines(args.synthetic),
        args.ratio,
        args.total,
        args.seed,
        args.with_replacement,
    )
    save_manifest(manifest, args.out)
    print(
        f"mixed {manifest.n_original} original + {manifest.n_synthetic} synthetic "
        f"items (ratio {manifest.ratio}), wrote {args.out}"
    )
    return 0


def cmd_overlay(args: argparse.Namespace) -> int:
    raster = load_raster(args.image)
    fused = load_fused(args.fused)
    save_png(render_overlay(raster, fused.boxes), args.out)
    print(f"wrote {args.out}")
    return 0


def _print_sweep_table(sweep: dict) -> None:
    header = f"{'side':>6} {'tiles':>6} {'fused':>6} {'prec':>7} {'recall':>7} {'f1':>7} {'map':>7}"
    print(header)
    for run in sweep["runs"]:
        report = run.get("report") or {}

        def fmt(key: str) -> str:
            value = report.get(key)
            return f"{value:7.4f}" if isinstance(value, (int, float)) else f"{'-':>7}"

        print(
            f"{run['side']:>6} {run['tiles']:>6} {run['fused_boxes']:>6} "
            f"{fmt('precision')} {fmt('recall')} {fmt('f1')} {fmt('map')}"
        )


def cmd_pipeline(args: argparse.Namespace) -> int:
    if args.config:
        config = _pipeline_config_from_file(args.config, args)
    else:
        if not args.out_dir:
            raise ValidationError("no output directory: pass --out-dir")
        config = PipelineConfig(
            out_dir=args.out_dir,
            image_path=args.image,
            annotations_path=args.gt,
            width=args.width,
            height=args.height,
            side=args.side if args.side is not None else 640,
            r=args.r,
            seed=args.seed if args.seed is not None else 0,
            workers=args.workers if args.workers is not None else 0,
            save_tiles=args.save_tiles,
            overlay=args.overlay,
        )
    if args.sweep:
        try:
            sides = tuple(int(s) for s in args.sweep.split(",") if s)
        except ValueError as exc:
            raise ValidationError(f"--sweep expects comma-separated ints: {exc}") from exc
        sweep = run_sweep(config, sides or DEFAULT_SWEEP_SIDES)
        _print_sweep_table(sweep)
    else:
        summary = run_pipeline(config)
        report = summary.get("report")
        line = (
            f"{summary['tiles']} tiles, {summary['fused_boxes']} fused boxes"
        )
        if report:
            line += (
                f", P {report['precision']:.4f} R {report['recall']:.4f} "
                f"F1 {report['f1']:.4f}"
            )
        print(f"{line}, artifacts in {config.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tiledetect",
        description="Tiled object detection over large rasters with "
        "Poisson-disk tile planning and EIoU ensemble fusion.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="plan full-coverage tiles over an image")
    p.add_argument("--image", help="raster to plan over (or use --width/--height)")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--side", type=int, default=640, help="tile side in pixels")
    p.add_argument("--r", type=float, default=None, help="min center spacing (default side/2)")
    p.add_argument("--k", type=int, default=30, help="sampling attempts per active point")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="plan JSON path")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("tile", help="extract tile rasters listed in a plan")
    p.add_argument("--image", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_tile)

    p = sub.add_parser("detect", help="run detectors over planned tiles")
    p.add_argument("--plan", required=True)
    p.add_argument("--detectors", help="detector config JSON (default: one identity synthetic)")
    p.add_argument("--gt", help="annotations JSON (required by synthetic detectors)")
    p.add_argument("--tiles-dir", help="directory from the tile command (required by plugins)")
    p.add_argument("--out", required=True, help="detections JSONL path")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("fuse", help="merge detections into one global set")
    p.add_argument("--plan", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--score-threshold", type=float, default=0.25)
    p.add_argument("--suppression-iou", type=float, default=0.5)
    p.add_argument("--suppression-metric", choices=["iou", "eiou"], default="iou")
    p.add_argument("--eiou-threshold", type=float, default=0.5)
    p.add_argument("--no-eiou-rescoring", action="store_true")
    p.add_argument("--coordinate-fusion", action="store_true")
    p.add_argument("--class-agnostic", action="store_true")
    p.add_argument(
        "--weight", action="append", metavar="NAME=FLOAT",
        help="per-detector score weight, repeatable",
    )
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="score fused detections against ground truth")
    p.add_argument("--fused", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--iou-threshold", type=float, default=0.5)
    p.add_argument("--interpolation", choices=["all_point", "11point"], default="all_point")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("overlay", help="draw fused boxes onto the image")
    p.add_argument("--image", required=True)
    p.add_argument("--fused", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_overlay)

    synth = sub.add_parser("synth", help="synthetic data tools")
    ssub = synth.add_subparsers(dest="synth_command", required=True)

    p = ssub.add_parser("scene", help="generate a random scene and its annotations")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--min-size", type=float, default=20.0)
    p.add_argument("--max-size", type=float, default=60.0)
    p.add_argument("--classes", type=int, default=1)
    p.add_argument("--min-gap", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-out", help="optional rendered PNG path")
    p.add_argument("--gt-out", required=True, help="annotations JSON path")
    p.set_defaults(func=cmd_synth_scene)

    p = ssub.add_parser("crops", help="sample training crops around objects")
    p.add_argument("--image", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--side", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-visibility", type=float, default=0.25)
    p.add_argument("--yolo", action="store_true", help="also write normalized label files")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth_crops)

    p = ssub.add_parser("mix", help="blend original and synthetic item lists")
    p.add_argument("--original", required=True, help="text file, one item per line")
    p.add_argument("--synthetic", required=True, help="text file, one item per line")
    p.add_argument("--ratio", type=float, required=True, help="fraction of original items")
    p.add_argument("--total", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--with-replacement", action="store_true")
    p.add_argument("--out", required=True, help="manifest JSON path")
    p.set_defaults(func=cmd_synth_mix)

    p = sub.add_parser("pipeline", help="run plan/tile/detect/fuse/eval in one go")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--image")
    p.add_argument("--gt")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--side", type=int, default=None)
    p.add_argument("--r", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--save-tiles", action="store_true")
    p.add_argument("--overlay", action="store_true")
    p.add_argument("--sweep", help="comma-separated tile sides, e.g. 320,640,1280")
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return int(args.func(args) or 0)
    except ValidationError as exc:
        return _fail(exc, 2)
    except PluginError as exc:
        return _fail(exc, 3)
    except (RasterIOError, OSError) as exc:
        return _fail(exc, 4)


def _fail(exc: Exception, code: int) -> int:
    print(
        json.dumps({"error": type(exc).__name__, "message": str(exc)}),
        file=sys.stderr,
    )
    return code


if __name__ == "__main__":
    sys.exit(main())
