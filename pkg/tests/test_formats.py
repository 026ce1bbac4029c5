"""Serialization round-trips and byte stability of the JSON artifacts."""

import random

import pytest

from tiledetect.detector import DetectionSet
from tiledetect.errors import ValidationError
from tiledetect.evaluation import AnnotationSet, evaluate_detections
from tiledetect.formats import (
    box_from_dict,
    box_to_dict,
    dumps_stable,
    load_annotations,
    load_detections,
    load_fused,
    load_plan,
    load_yolo_labels,
    read_json,
    save_annotations,
    save_detections,
    save_fused,
    save_plan,
    save_report,
    save_yolo_labels,
    write_json,
)
from tiledetect.fusion import FusedSet
from tiledetect.geometry import BBox
from tiledetect.synthgen import MixManifest, load_manifest, save_manifest
from tiledetect.tiling import plan_tiles

from conftest import rand_boxes


class TestStableJson:
    def test_keys_sorted_and_trailing_newline(self):
        text = dumps_stable({"b": 1, "a": 2})
        assert text.index('"a"') < text.index('"b"')
        assert text.endswith("\n")

    def test_write_read_round_trip(self, tmp_path):
        path = tmp_path / "x.json"
        write_json({"k": [1, 2.5, "s"]}, path)
        assert read_json(path) == {"k": [1, 2.5, "s"]}

    def test_read_rejects_malformed(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{nope")
        with pytest.raises(ValidationError):
            read_json(path)

    def test_write_is_byte_stable(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        value = {"z": 1, "a": {"y": 2, "b": 3}, "list": [3, 1, 2]}
        write_json(value, a)
        write_json(value, b)
        assert a.read_bytes() == b.read_bytes()


class TestBoxDict:
    def test_round_trip(self):
        box = BBox(1.5, 2.5, 10.0, 20.0, class_id=3, score=0.75)
        assert box_from_dict(box_to_dict(box)) == box

    def test_rejects_non_object(self):
        with pytest.raises(ValidationError):
            box_from_dict([1, 2, 3, 4])

    def test_rejects_missing_field(self):
        d = box_to_dict(BBox(0, 0, 1, 1))
        del d["x_max"]
        with pytest.raises(ValidationError):
            box_from_dict(d)


class TestPlanIO:
    def test_round_trip(self, tmp_path):
        plan = plan_tiles(1000, 800, side=320, seed=7)
        path = tmp_path / "plan.json"
        save_plan(plan, path)
        back = load_plan(path)
        assert back == plan

    def test_byte_stable(self, tmp_path):
        plan = plan_tiles(1000, 800, side=320, seed=7)
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        save_plan(plan, a)
        save_plan(plan, b)
        assert a.read_bytes() == b.read_bytes()

    def test_malformed_rejected(self, tmp_path):
        path = tmp_path / "plan.json"
        write_json({"image_width": 10}, path)
        with pytest.raises(ValidationError):
            load_plan(path)


class TestDetectionsIO:
    def test_round_trip(self, tmp_path):
        rng = random.Random(1)
        sets = [
            DetectionSet(
                detector_name="synthetic",
                tile_id=0,
                frame="local",
                boxes=tuple(rand_boxes(rng, 5, 320, 320)),
            ),
            DetectionSet(
                detector_name="other",
                tile_id=3,
                frame="local",
                boxes=(),
            ),
        ]
        path = tmp_path / "det.jsonl"
        save_detections(sets, path)
        assert load_detections(path) == sets

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "det.jsonl"
        path.write_text('{"detector": "a"}\n')
        with pytest.raises(ValidationError):
            load_detections(path)


class TestFusedIO:
    def test_round_trip(self, tmp_path):
        rng = random.Random(2)
        boxes = tuple(rand_boxes(rng, 4, 320, 320))
        fused = FusedSet(boxes, tuple(1 + i for i in range(len(boxes))))
        path = tmp_path / "fused.json"
        save_fused(fused, path)
        assert load_fused(path) == fused


class TestAnnotationsIO:
    def test_round_trip(self, tmp_path):
        rng = random.Random(3)
        ann = AnnotationSet("img-1", 640, 480, tuple(rand_boxes(rng, 6, 640, 480)))
        path = tmp_path / "ann.json"
        save_annotations(ann, path)
        assert load_annotations(path) == ann

    def test_clip_option_salvages_oversize_boxes(self, tmp_path):
        path = tmp_path / "ann.json"
        write_json(
            {
                "image_id": "img",
                "width": 100,
                "height": 100,
                "boxes": [
                    {"x_min": 0.0, "y_min": 0.0, "x_max": 120.0, "y_max": 10.0,
                     "class_id": 0, "score": 1.0}
                ],
            },
            path,
        )
        with pytest.raises(ValidationError):
            load_annotations(path)
        ann = load_annotations(path, clip=True)
        assert ann.boxes[0].x_max == 100.0


class TestYolo:
    def test_round_trip_within_format_precision(self, tmp_path):
        rng = random.Random(4)
        boxes = rand_boxes(rng, 8, 640, 640)
        path = tmp_path / "labels.txt"
        save_yolo_labels(boxes, path, 640, 640)
        back = load_yolo_labels(path, 640, 640)
        assert len(back) == len(boxes)
        for orig, got in zip(boxes, back):
            assert got.class_id == orig.class_id
            # 6 decimal places of the normalized value: ~1e-6 * 640 px.
            assert abs(got.x_min - orig.x_min) < 1e-3
            assert abs(got.y_max - orig.y_max) < 1e-3

    def test_no_scores_in_file(self, tmp_path):
        path = tmp_path / "labels.txt"
        save_yolo_labels([BBox(0, 0, 10, 10, score=0.5)], path, 100, 100)
        fields = path.read_text().split()
        assert len(fields) == 5

    def test_bad_field_count(self, tmp_path):
        path = tmp_path / "labels.txt"
        path.write_text("0 0.5 0.5 0.1\n")
        with pytest.raises(ValidationError):
            load_yolo_labels(path, 100, 100)

    def test_label_outside_image_rejected(self, tmp_path):
        path = tmp_path / "labels.txt"
        path.write_text("0 2.0 2.0 0.1 0.1\n")
        with pytest.raises(ValidationError):
            load_yolo_labels(path, 100, 100)

    def test_slightly_out_of_range_clipped(self, tmp_path):
        path = tmp_path / "labels.txt"
        path.write_text("0 0.0 0.5 0.2 0.2\n")  # spills past x=0
        boxes = load_yolo_labels(path, 100, 100)
        assert boxes[0].x_min == 0.0


class TestReportIO:
    def test_report_file_shape(self, tmp_path):
        gt = [BBox(0, 0, 10, 10), BBox(100, 0, 110, 10)]
        det = [BBox(0, 0, 10, 10, score=0.9)]
        report = evaluate_detections(det, gt, 0.5)
        path = tmp_path / "report.json"
        save_report(report, path)
        data = read_json(path)
        assert data["tp"] == 1 and data["fn"] == 1
        assert data["map"] == pytest.approx(0.5)
        assert data["per_class_ap"] == {"0": pytest.approx(0.5)}


class TestManifestIO:
    def test_round_trip(self, tmp_path):
        manifest = MixManifest(
            ratio=0.4,
            total=5,
            n_original=2,
            n_synthetic=3,
            seed=9,
            items=(
                ("original", "a"),
                ("synthetic", "s1"),
                ("original", "b"),
                ("synthetic", "s2"),
                ("synthetic", "s3"),
            ),
        )
        path = tmp_path / "manifest.json"
        save_manifest(manifest, path)
        assert load_manifest(path) == manifest
