"""End-to-end pipeline runs: artifacts, plugins, determinism, sweeps."""

import sys

import pytest

from tiledetect.detector import DetectorSpec, NoiseProfile
from tiledetect.errors import ValidationError
from tiledetect.formats import (
    load_detections,
    load_fused,
    load_plan,
    read_json,
    save_annotations,
)
from tiledetect.pipeline import PipelineConfig, run_pipeline, run_sweep
from tiledetect.raster import save_png
from tiledetect.synthgen import generate_annotations, generate_scene

from conftest import PLUGIN_DIR

ARTIFACTS = ("plan.json", "detections.jsonl", "fused.json", "summary.json")


def write_frame(tmp_path, width=400, height=300, count=8, seed=11):
    ann = generate_annotations(width, height, count, 20, 46, num_classes=2, seed=seed)
    img = generate_scene(width, height, ann, seed=seed)
    img_path = tmp_path / "frame.png"
    ann_path = tmp_path / "frame.json"
    save_png(img, img_path)
    save_annotations(ann, ann_path)
    return img_path, ann_path, ann


class TestRasterlessRun:
    def test_artifacts_and_summary(self, tmp_path):
        _, ann_path, ann = write_frame(tmp_path)
        out = tmp_path / "out"
        config = PipelineConfig(
            out_dir=str(out),
            annotations_path=str(ann_path),
            side=160,
            seed=3,
        )
        summary = run_pipeline(config)
        for name in ARTIFACTS + ("report.json", "timings.json"):
            assert (out / name).exists(), name
        assert not (out / "tiles").exists()
        assert summary["width"] == 400 and summary["height"] == 300
        assert summary["tiles"] >= 4
        assert summary["coverage"] == 1.0
        assert summary["image_id"] == ann.image_id
        assert summary == read_json(out / "summary.json")

    def test_identity_detector_finds_everything(self, tmp_path):
        _, ann_path, ann = write_frame(tmp_path)
        out = tmp_path / "out"
        config = PipelineConfig(
            out_dir=str(out),
            annotations_path=str(ann_path),
            side=160,
            seed=3,
            detectors=(
                DetectorSpec(name="ident", profile=NoiseProfile(visibility=1.0)),
            ),
        )
        summary = run_pipeline(config)
        report = summary["report"]
        assert report is not None
        assert report["recall"] == 1.0
        assert report["fn"] == 0

    def test_plan_and_detections_loadable(self, tmp_path):
        _, ann_path, _ = write_frame(tmp_path)
        out = tmp_path / "out"
        run_pipeline(
            PipelineConfig(out_dir=str(out), annotations_path=str(ann_path), side=160)
        )
        plan = load_plan(out / "plan.json")
        assert plan.coverage == 1.0
        sets = load_detections(out / "detections.jsonl")
        assert len(sets) == len(plan.tiles)
        assert all(ds.frame == "local" for ds in sets)
        load_fused(out / "fused.json")


class TestRasterRun:
    def test_save_tiles_writes_one_png_per_tile(self, tmp_path):
        img_path, ann_path, _ = write_frame(tmp_path)
        out = tmp_path / "out"
        run_pipeline(
            PipelineConfig(
                out_dir=str(out),
                image_path=str(img_path),
                annotations_path=str(ann_path),
                side=160,
                save_tiles=True,
            )
        )
        plan = load_plan(out / "plan.json")
        tiles = sorted((out / "tiles").glob("tile_*.png"))
        assert len(tiles) == len(plan.tiles)

    def test_overlay_written(self, tmp_path):
        img_path, ann_path, _ = write_frame(tmp_path)
        out = tmp_path / "out"
        run_pipeline(
            PipelineConfig(
                out_dir=str(out),
                image_path=str(img_path),
                annotations_path=str(ann_path),
                side=160,
                overlay=True,
            )
        )
        assert (out / "overlay.png").exists()

    def test_blob_plugin_end_to_end(self, tmp_path):
        # One bright rectangle on a dark background; the plugin thresholds
        # pixels and reports the bounding box of what it sees per tile.
        from tiledetect.evaluation import AnnotationSet
        from tiledetect.geometry import BBox

        ann = AnnotationSet(
            "blob-frame", 200, 200, (BBox(60.0, 80.0, 120.0, 140.0, class_id=0),)
        )
        img = generate_scene(200, 200, ann, seed=1)
        img_path = tmp_path / "blob.png"
        ann_path = tmp_path / "blob.json"
        save_png(img, img_path)
        save_annotations(ann, ann_path)
        out = tmp_path / "out"
        config = PipelineConfig(
            out_dir=str(out),
            image_path=str(img_path),
            annotations_path=str(ann_path),
            side=256,  # one tile covering the whole frame
            detectors=(
                DetectorSpec(
                    name="blob",
                    kind="plugin",
                    command=(sys.executable, str(PLUGIN_DIR / "blob_plugin.py")),
                ),
            ),
        )
        summary = run_pipeline(config)
        fused = load_fused(out / "fused.json")
        assert len(fused.boxes) == 1
        got = fused.boxes[0]
        assert abs(got.x_min - 60.0) <= 1.0
        assert abs(got.y_min - 80.0) <= 1.0
        assert abs(got.x_max - 120.0) <= 1.0
        assert abs(got.y_max - 140.0) <= 1.0
        assert summary["report"]["recall"] == 1.0

    def test_size_mismatch_rejected(self, tmp_path):
        img_path, ann_path, _ = write_frame(tmp_path)
        with pytest.raises(ValidationError):
            run_pipeline(
                PipelineConfig(
                    out_dir=str(tmp_path / "out"),
                    image_path=str(img_path),
                    annotations_path=str(ann_path),
                    width=999,
                    height=300,
                )
            )


class TestConfigErrors:
    def test_synthetic_needs_annotations(self, tmp_path):
        img_path, _, _ = write_frame(tmp_path)
        with pytest.raises(ValidationError):
            run_pipeline(
                PipelineConfig(out_dir=str(tmp_path / "out"), image_path=str(img_path))
            )

    def test_plugin_needs_raster(self, tmp_path):
        _, ann_path, _ = write_frame(tmp_path)
        with pytest.raises(ValidationError):
            run_pipeline(
                PipelineConfig(
                    out_dir=str(tmp_path / "out"),
                    annotations_path=str(ann_path),
                    detectors=(
                        DetectorSpec(
                            name="p", kind="plugin", command=(sys.executable, "x.py")
                        ),
                    ),
                )
            )

    def test_overlay_needs_raster(self, tmp_path):
        _, ann_path, _ = write_frame(tmp_path)
        with pytest.raises(ValidationError):
            run_pipeline(
                PipelineConfig(
                    out_dir=str(tmp_path / "out"),
                    annotations_path=str(ann_path),
                    overlay=True,
                )
            )

    def test_no_frame_size_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            run_pipeline(PipelineConfig(out_dir=str(tmp_path / "out")))

    def test_duplicate_detector_names_rejected(self):
        with pytest.raises(ValidationError):
            PipelineConfig(
                out_dir="x",
                detectors=(
                    DetectorSpec(name="a"),
                    DetectorSpec(name="a"),
                ),
            )


class TestDeterminism:
    def artifact_bytes(self, out):
        return {
            name: (out / name).read_bytes()
            for name in ARTIFACTS + ("report.json",)
        }

    def test_worker_count_does_not_change_artifacts(self, tmp_path):
        img_path, ann_path, _ = write_frame(tmp_path, seed=21)
        results = {}
        for workers in (1, 4):
            out = tmp_path / f"out_w{workers}"
            run_pipeline(
                PipelineConfig(
                    out_dir=str(out),
                    image_path=str(img_path),
                    annotations_path=str(ann_path),
                    side=128,
                    seed=5,
                    workers=workers,
                    save_tiles=True,
                )
            )
            results[workers] = self.artifact_bytes(out)
        assert results[1] == results[4]

    def test_rerun_is_byte_identical(self, tmp_path):
        _, ann_path, _ = write_frame(tmp_path, seed=22)
        outs = []
        for tag in ("a", "b"):
            out = tmp_path / f"out_{tag}"
            run_pipeline(
                PipelineConfig(
                    out_dir=str(out), annotations_path=str(ann_path), side=160, seed=9
                )
            )
            outs.append(self.artifact_bytes(out))
        assert outs[0] == outs[1]


class TestSweep:
    def test_one_directory_per_side(self, tmp_path):
        _, ann_path, _ = write_frame(tmp_path, width=500, height=400, seed=31)
        out = tmp_path / "sweep"
        sweep = run_sweep(
            PipelineConfig(out_dir=str(out), annotations_path=str(ann_path), seed=2),
            sides=(128, 256),
        )
        assert (out / "sweep_summary.json").exists()
        assert [run["side"] for run in sweep["runs"]] == [128, 256]
        for side in (128, 256):
            sub = out / f"side_{side:04d}"
            assert (sub / "summary.json").exists()
        # Smaller tiles mean more of them.
        assert sweep["runs"][0]["tiles"] > sweep["runs"][1]["tiles"]

    def test_empty_sides_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            run_sweep(PipelineConfig(out_dir=str(tmp_path), width=100, height=100), ())
