"""On-disk formats for plans, detections, fused sets, annotations, labels.

JSON artifacts are written with sorted keys and a fixed indent, so a
given value always serializes to the same bytes. Floats go through
Python's repr (shortest round-trip form): reloading reproduces the exact
binary values.

Box dictionaries use the keys x_min, y_min, x_max, y_max, class_id,
score everywhere. YOLO label files are the usual normalized text lines:
``class cx cy w h``.
"""

from __future__ import annotations

import json
import os
from typing import Iterable, Sequence

from .detector import DetectionSet
from .errors import ValidationError
from .evaluation import AnnotationSet, EvalReport
from .fusion import FusedSet
from .geometry import BBox
from .tiling import Tile, TilePlan, clip_to_image


def dumps_stable(value: object) -> str:
    """Serialize to JSON with deterministic bytes for equal values."""
    return json.dumps(value, indent=2, sort_keys=True) + "\n"


def write_json(value: object, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_stable(value))


def read_json(path: str | os.PathLike) -> object:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON: {exc}") from exc


def box_to_dict(box: BBox) -> dict:
    return {
        "x_min": box.x_min,
        "y_min": box.y_min,
        "x_max": box.x_max,
        "y_max": box.y_max,
        "class_id": box.class_id,
        "score": box.score,
    }


def box_from_dict(obj: object, where: str = "box") -> BBox:
    if not isinstance(obj, dict):
        raise ValidationError(f"{where}: expected an object, got {type(obj).__name__}")
    try:
        return BBox(
            float(obj["x_min"]),
            float(obj["y_min"]),
            float(obj["x_max"]),
            float(obj["y_max"]),
            class_id=int(obj.get("class_id", 0)),
            score=float(obj.get("score", 1.0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{where}: {exc}") from exc


def save_plan(plan: TilePlan, path: str | os.PathLike) -> None:
    write_json(
        {
            "image_width": plan.image_width,
            "image_height": plan.image_height,
            "side": plan.side,
            "r": plan.r,
            "seed": plan.seed,
            "coverage": plan.coverage,
            "tiles": [
                {
                    "tile_id": t.tile_id,
                    "origin_x": t.origin_x,
                    "origin_y": t.origin_y,
                    "side": t.side,
                    "provenance": t.provenance,
                }
                for t in plan.tiles
            ],
        },
        path,
    )


def load_plan(path: str | os.PathLike) -> TilePlan:
    data = read_json(path)
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: plan must be a JSON object")
    try:
        tiles = tuple(
            Tile(
                tile_id=int(t["tile_id"]),
                origin_x=int(t["origin_x"]),
                origin_y=int(t["origin_y"]),
                side=int(t["side"]),
                provenance=str(t["provenance"]),
            )
            for t in data["tiles"]
        )
        return TilePlan(
            image_width=int(data["image_width"]),
            image_height=int(data["image_height"]),
            side=int(data["side"]),
            r=float(data["r"]),
            seed=int(data["seed"]),
            tiles=tiles,
            coverage=float(data["coverage"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: malformed plan: {exc}") from exc


def save_detections(sets: Sequence[DetectionSet], path: str | os.PathLike) -> None:
    """One JSON line per detection set (detector x tile)."""
    with open(path, "w", encoding="utf-8") as fh:
        for ds in sets:
            fh.write(
                json.dumps(
                    {
                        "detector": ds.detector_name,
                        "tile_id": ds.tile_id,
                        "frame": ds.frame,
                        "boxes": [box_to_dict(b) for b in ds.boxes],
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_detections(path: str | os.PathLike) -> list[DetectionSet]:
    out: list[DetectionSet] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path} line {line_no}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{where}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise ValidationError(f"{where}: expected an object")
            try:
                out.append(
                    DetectionSet(
                        detector_name=str(obj["detector"]),
                        tile_id=int(obj["tile_id"]),
                        frame=str(obj["frame"]),
                        boxes=tuple(
                            box_from_dict(b, f"{where} box {i}")
                            for i, b in enumerate(obj["boxes"])
                        ),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"{where}: malformed detection set: {exc}") from exc
    return out


def save_fused(fused: FusedSet, path: str | os.PathLike) -> None:
    write_json(
        {
            "boxes": [box_to_dict(b) for b in fused.boxes],
            "source_counts": list(fused.source_counts),
        },
        path,
    )


def load_fused(path: str | os.PathLike) -> FusedSet:
    data = read_json(path)
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: fused set must be a JSON object")
    try:
        return FusedSet(
            boxes=tuple(
                box_from_dict(b, f"{path} box {i}")
                for i, b in enumerate(data["boxes"])
            ),
            source_counts=tuple(int(c) for c in data["source_counts"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: malformed fused set: {exc}") from exc


def save_annotations(ann: AnnotationSet, path: str | os.PathLike) -> None:
    write_json(
        {
            "image_id": ann.image_id,
            "width": ann.width,
            "height": ann.height,
            "boxes": [box_to_dict(b) for b in ann.boxes],
        },
        path,
    )


def load_annotations(path: str | os.PathLike, clip: bool = False) -> AnnotationSet:
    """Load ground truth. With clip=True, boxes are first clipped to the
    image rectangle and zero-area leftovers dropped."""
    data = read_json(path)
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: annotations must be a JSON object")
    try:
        width = int(data["width"])
        height = int(data["height"])
        boxes = [
            box_from_dict(b, f"{path} box {i}")
            for i, b in enumerate(data["boxes"])
        ]
        if clip:
            boxes = [c for b in boxes if (c := clip_to_image(b, width, height))]
        return AnnotationSet(
            image_id=str(data.get("image_id", "")),
            width=width,
            height=height,
            boxes=tuple(boxes),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: malformed annotations: {exc}") from exc


def save_yolo_labels(
    boxes: Iterable[BBox], path: str | os.PathLike, width: int, height: int
) -> None:
    """Write normalized ``class cx cy w h`` lines (no scores)."""
    with open(path, "w", encoding="utf-8") as fh:
        for b in boxes:
            cx = (b.x_min + b.x_max) / 2.0 / width
            cy = (b.y_min + b.y_max) / 2.0 / height
            w = b.width / width
            h = b.height / height
            fh.write(f"{b.class_id} {cx:.6f} {cy:.6f} {w:.6f} {h:.6f}\n")


def load_yolo_labels(
    path: str | os.PathLike, width: int, height: int, score: float = 1.0
) -> list[BBox]:
    """Read normalized labels into pixel-coordinate boxes.

    Boxes are clipped to the image so slightly out-of-range labels stay
    loadable; a label fully outside the image is an error.
    """
    out: list[BBox] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 5:
                raise ValidationError(
                    f"{path} line {line_no}: expected 5 fields, got {len(parts)}"
                )
            try:
                class_id = int(parts[0])
                cx, cy, w, h = (float(p) for p in parts[1:])
            except ValueError as exc:
                raise ValidationError(f"{path} line {line_no}: {exc}") from exc
            box = BBox(
                (cx - w / 2.0) * width,
                (cy - h / 2.0) * height,
                (cx + w / 2.0) * width,
                (cy + h / 2.0) * height,
                class_id=class_id,
                score=score,
            )
            clipped = clip_to_image(box, width, height)
            if clipped is None:
                raise ValidationError(
                    f"{path} line {line_no}: label lies outside the image"
                )
            out.append(clipped)
    return out


def report_to_dict(report: EvalReport) -> dict:
    return {
        "tp": report.tp,
        "fp": report.fp,
        "fn": report.fn,
        "tn": report.tn,
        "precision": report.precision,
        "recall": report.recall,
        "f1": report.f1,
        "accuracy": report.accuracy,
        "per_class_ap": {str(c): ap for c, ap in report.per_class_ap.items()},
        "map": report.mean_ap,
    }


def save_report(report: EvalReport, path: str | os.PathLike) -> None:
    write_json(report_to_dict(report), path)
