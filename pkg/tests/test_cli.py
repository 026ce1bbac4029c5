"""Command line behavior: happy paths, exit codes, config handling."""

import json
import sys

from tiledetect.cli import main
from tiledetect.formats import (
    load_detections,
    load_fused,
    load_plan,
    read_json,
    save_annotations,
    save_fused,
)

from conftest import PLUGIN_DIR


def make_scene(tmp_path, width=300, height=200, count=6, seed=4):
    from tiledetect.raster import save_png
    from tiledetect.synthgen import generate_annotations, generate_scene

    ann = generate_annotations(width, height, count, 20, 40, num_classes=2, seed=seed)
    img = generate_scene(width, height, ann, seed=seed)
    img_path = tmp_path / "scene.png"
    gt_path = tmp_path / "scene.json"
    save_png(img, img_path)
    save_annotations(ann, gt_path)
    return img_path, gt_path


def stderr_json(capsys):
    err = capsys.readouterr().err.strip()
    assert err.count("\n") == 0, "diagnostics must be a single line"
    data = json.loads(err)
    assert set(data) == {"error", "message"}
    return data


class TestPlan:
    def test_happy_path(self, tmp_path, capsys):
        out = tmp_path / "plan.json"
        code = main(
            ["plan", "--width", "500", "--height", "400", "--side", "160",
             "--out", str(out)]
        )
        assert code == 0
        assert "coverage 1.0" in capsys.readouterr().out
        assert load_plan(out).coverage == 1.0

    def test_missing_size_is_validation_error(self, tmp_path, capsys):
        code = main(["plan", "--out", str(tmp_path / "p.json")])
        assert code == 2
        assert stderr_json(capsys)["error"] == "ValidationError"

    def test_missing_image_is_io_error(self, tmp_path, capsys):
        code = main(
            ["plan", "--image", str(tmp_path / "nope.png"),
             "--out", str(tmp_path / "p.json")]
        )
        assert code == 4
        stderr_json(capsys)

    def test_rerun_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for out in (a, b):
            assert main(
                ["plan", "--width", "500", "--height", "400", "--side", "160",
                 "--seed", "7", "--out", str(out)]
            ) == 0
        assert a.read_bytes() == b.read_bytes()


class TestStageChain:
    def test_plan_tile_detect_fuse_eval(self, tmp_path, capsys):
        img_path, gt_path = make_scene(tmp_path)
        plan_path = tmp_path / "plan.json"
        tiles_dir = tmp_path / "tiles"
        det_path = tmp_path / "det.jsonl"
        fused_path = tmp_path / "fused.json"
        report_path = tmp_path / "report.json"

        assert main(
            ["plan", "--image", str(img_path), "--side", "128",
             "--out", str(plan_path)]
        ) == 0
        assert main(
            ["tile", "--image", str(img_path), "--plan", str(plan_path),
             "--out-dir", str(tiles_dir)]
        ) == 0
        plan = load_plan(plan_path)
        assert len(list(tiles_dir.glob("tile_*.png"))) == len(plan.tiles)
        assert (tiles_dir / "tiles.jsonl").exists()

        assert main(
            ["detect", "--plan", str(plan_path), "--gt", str(gt_path),
             "--out", str(det_path)]
        ) == 0
        sets = load_detections(det_path)
        assert len(sets) == len(plan.tiles)

        assert main(
            ["fuse", "--plan", str(plan_path), "--detections", str(det_path),
             "--out", str(fused_path)]
        ) == 0
        fused = load_fused(fused_path)
        assert len(fused.boxes) > 0

        assert main(
            ["eval", "--fused", str(fused_path), "--gt", str(gt_path),
             "--out", str(report_path)]
        ) == 0
        out = capsys.readouterr().out
        assert "P 1.0000" in out and "R 1.0000" in out
        report = read_json(report_path)
        assert report["recall"] == 1.0

    def test_tile_plan_size_mismatch(self, tmp_path, capsys):
        img_path, _ = make_scene(tmp_path)
        plan_path = tmp_path / "plan.json"
        assert main(
            ["plan", "--width", "999", "--height", "999", "--out", str(plan_path)]
        ) == 0
        code = main(
            ["tile", "--image", str(img_path), "--plan", str(plan_path),
             "--out-dir", str(tmp_path / "tiles")]
        )
        assert code == 2
        stderr_json(capsys)

    def test_detect_synthetic_without_gt(self, tmp_path, capsys):
        plan_path = tmp_path / "plan.json"
        main(["plan", "--width", "300", "--height", "200", "--out", str(plan_path)])
        code = main(
            ["detect", "--plan", str(plan_path), "--out", str(tmp_path / "d.jsonl")]
        )
        assert code == 2
        stderr_json(capsys)


class TestPluginExitCodes:
    def setup_chain(self, tmp_path):
        img_path, gt_path = make_scene(tmp_path)
        plan_path = tmp_path / "plan.json"
        tiles_dir = tmp_path / "tiles"
        main(["plan", "--image", str(img_path), "--side", "128",
              "--out", str(plan_path)])
        main(["tile", "--image", str(img_path), "--plan", str(plan_path),
              "--out-dir", str(tiles_dir)])
        return plan_path, tiles_dir

    def write_detector(self, tmp_path, script):
        spec = {
            "name": "plug",
            "kind": "plugin",
            "command": [sys.executable, str(PLUGIN_DIR / script)],
        }
        path = tmp_path / "detectors.json"
        path.write_text(json.dumps([spec]))
        return path

    def test_plugin_detect_happy(self, tmp_path):
        plan_path, tiles_dir = self.setup_chain(tmp_path)
        det_file = self.write_detector(tmp_path, "fixed_box_plugin.py")
        out = tmp_path / "det.jsonl"
        code = main(
            ["detect", "--plan", str(plan_path), "--detectors", str(det_file),
             "--tiles-dir", str(tiles_dir), "--out", str(out)]
        )
        assert code == 0
        sets = load_detections(out)
        assert all(len(ds.boxes) == 1 for ds in sets)

    def test_failing_plugin_exit_3(self, tmp_path, capsys):
        plan_path, tiles_dir = self.setup_chain(tmp_path)
        det_file = self.write_detector(tmp_path, "failing_plugin.py")
        code = main(
            ["detect", "--plan", str(plan_path), "--detectors", str(det_file),
             "--tiles-dir", str(tiles_dir), "--out", str(tmp_path / "d.jsonl")]
        )
        assert code == 3
        assert stderr_json(capsys)["error"] == "PluginError"

    def test_bad_json_plugin_exit_3(self, tmp_path, capsys):
        plan_path, tiles_dir = self.setup_chain(tmp_path)
        det_file = self.write_detector(tmp_path, "bad_json_plugin.py")
        code = main(
            ["detect", "--plan", str(plan_path), "--detectors", str(det_file),
             "--tiles-dir", str(tiles_dir), "--out", str(tmp_path / "d.jsonl")]
        )
        assert code == 3
        stderr_json(capsys)

    def test_plugin_without_tiles_dir(self, tmp_path, capsys):
        plan_path, _ = self.setup_chain(tmp_path)
        det_file = self.write_detector(tmp_path, "fixed_box_plugin.py")
        code = main(
            ["detect", "--plan", str(plan_path), "--detectors", str(det_file),
             "--out", str(tmp_path / "d.jsonl")]
        )
        assert code == 2
        stderr_json(capsys)


class TestFuseFlags:
    def fused_from(self, tmp_path, extra):
        img_path, gt_path = make_scene(tmp_path)
        plan_path = tmp_path / "plan.json"
        det_path = tmp_path / "det.jsonl"
        fused_path = tmp_path / "fused.json"
        main(["plan", "--image", str(img_path), "--side", "128",
              "--out", str(plan_path)])
        main(["detect", "--plan", str(plan_path), "--gt", str(gt_path),
              "--out", str(det_path)])
        code = main(
            ["fuse", "--plan", str(plan_path), "--detections", str(det_path),
             "--out", str(fused_path)] + extra
        )
        return code, fused_path

    def test_weight_flag(self, tmp_path):
        code, fused_path = self.fused_from(tmp_path, ["--weight", "synthetic=0.5"])
        assert code == 0
        fused = load_fused(fused_path)
        assert all(b.score == 0.5 for b in fused.boxes)

    def test_bad_weight_flag(self, tmp_path, capsys):
        code, _ = self.fused_from(tmp_path, ["--weight", "synthetic"])
        assert code == 2
        stderr_json(capsys)

    def test_metric_flag(self, tmp_path):
        code, fused_path = self.fused_from(
            tmp_path, ["--suppression-metric", "eiou", "--eiou-threshold", "0.3"]
        )
        assert code == 0
        load_fused(fused_path)


class TestSynthCommands:
    def test_scene_writes_outputs(self, tmp_path, capsys):
        gt_out = tmp_path / "gt.json"
        img_out = tmp_path / "img.png"
        code = main(
            ["synth", "scene", "--width", "200", "--height", "150",
             "--count", "5", "--seed", "1", "--gt-out", str(gt_out),
             "--image-out", str(img_out)]
        )
        assert code == 0
        assert gt_out.exists() and img_out.exists()
        assert "5 boxes" in capsys.readouterr().out

    def test_crops_with_yolo(self, tmp_path):
        img_path, gt_path = make_scene(tmp_path)
        out_dir = tmp_path / "crops"
        code = main(
            ["synth", "crops", "--image", str(img_path), "--gt", str(gt_path),
             "--side", "96", "--count", "4", "--yolo", "--out-dir", str(out_dir)]
        )
        assert code == 0
        assert len(list(out_dir.glob("crop_*.png"))) == 4
        assert len(list(out_dir.glob("crop_*.txt"))) == 4
        assert (out_dir / "index.jsonl").exists()

    def test_mix_deterministic(self, tmp_path):
        orig = tmp_path / "orig.txt"
        syn = tmp_path / "syn.txt"
        orig.write_text("".join(f"o{i}\n" for i in range(50)))
        syn.write_text("".join(f"s{i}\n" for i in range(50)))
        outs = []
        for tag in ("a", "b"):
            out = tmp_path / f"m_{tag}.json"
            code = main(
                ["synth", "mix", "--original", str(orig), "--synthetic", str(syn),
                 "--ratio", "0.4", "--total", "30", "--seed", "3",
                 "--out", str(out)]
            )
            assert code == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_mix_pool_too_small(self, tmp_path, capsys):
        orig = tmp_path / "orig.txt"
        syn = tmp_path / "syn.txt"
        orig.write_text("only-one\n")
        syn.write_text("s\n")
        code = main(
            ["synth", "mix", "--original", str(orig), "--synthetic", str(syn),
             "--ratio", "1.0", "--total", "5", "--out", str(tmp_path / "m.json")]
        )
        assert code == 2
        stderr_json(capsys)


class TestOverlayCommand:
    def test_happy_path(self, tmp_path):
        img_path, gt_path = make_scene(tmp_path)
        from tiledetect.fusion import FusedSet
        from tiledetect.geometry import BBox

        fused_path = tmp_path / "fused.json"
        save_fused(FusedSet((BBox(10.0, 10.0, 50.0, 50.0, score=0.9),), (1,)), fused_path)
        out = tmp_path / "overlay.png"
        code = main(
            ["overlay", "--image", str(img_path), "--fused", str(fused_path),
             "--out", str(out)]
        )
        assert code == 0
        assert out.exists()


class TestPipelineCommand:
    def test_flags_only(self, tmp_path, capsys):
        _, gt_path = make_scene(tmp_path)
        out_dir = tmp_path / "run"
        code = main(
            ["pipeline", "--gt", str(gt_path), "--side", "128",
             "--out-dir", str(out_dir)]
        )
        assert code == 0
        assert (out_dir / "summary.json").exists()
        assert "fused boxes" in capsys.readouterr().out

    def test_config_file_with_relative_paths(self, tmp_path):
        img_path, gt_path = make_scene(tmp_path)
        config = {
            "image": img_path.name,
            "annotations": gt_path.name,
            "side": 128,
            "seed": 2,
            "out_dir": str(tmp_path / "run"),
        }
        config_path = tmp_path / "run.json"
        config_path.write_text(json.dumps(config))
        assert main(["pipeline", "--config", str(config_path)]) == 0
        summary = read_json(tmp_path / "run" / "summary.json")
        assert summary["side"] == 128
        assert summary["seed"] == 2

    def test_cli_flags_override_config(self, tmp_path):
        _, gt_path = make_scene(tmp_path)
        config = {
            "annotations": gt_path.name,
            "side": 128,
            "out_dir": str(tmp_path / "run"),
        }
        config_path = tmp_path / "run.json"
        config_path.write_text(json.dumps(config))
        assert main(
            ["pipeline", "--config", str(config_path), "--side", "96",
             "--out-dir", str(tmp_path / "run2")]
        ) == 0
        summary = read_json(tmp_path / "run2" / "summary.json")
        assert summary["side"] == 96

    def test_unknown_config_key(self, tmp_path, capsys):
        config_path = tmp_path / "run.json"
        config_path.write_text(json.dumps({"sides": [1, 2]}))
        code = main(
            ["pipeline", "--config", str(config_path),
             "--out-dir", str(tmp_path / "run")]
        )
        assert code == 2
        assert "unknown keys" in stderr_json(capsys)["message"]

    def test_detectors_in_config(self, tmp_path):
        _, gt_path = make_scene(tmp_path)
        config = {
            "annotations": gt_path.name,
            "side": 128,
            "out_dir": str(tmp_path / "run"),
            "detectors": [
                {"name": "clean", "profile": {"visibility": 1.0}},
                {"name": "noisy", "profile": {"miss_rate": 0.3, "seed": 9},
                 "weight": 0.5},
            ],
            "fusion": {"score_threshold": 0.1},
        }
        config_path = tmp_path / "run.json"
        config_path.write_text(json.dumps(config))
        assert main(["pipeline", "--config", str(config_path)]) == 0
        summary = read_json(tmp_path / "run" / "summary.json")
        assert set(summary["detections"]) == {"clean", "noisy"}

    def test_no_out_dir(self, tmp_path, capsys):
        _, gt_path = make_scene(tmp_path)
        code = main(["pipeline", "--gt", str(gt_path)])
        assert code == 2
        stderr_json(capsys)

    def test_sweep_prints_table(self, tmp_path, capsys):
        _, gt_path = make_scene(tmp_path)
        code = main(
            ["pipeline", "--gt", str(gt_path), "--out-dir", str(tmp_path / "sw"),
             "--sweep", "96,160"]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "side" in out and "96" in out and "160" in out
        assert (tmp_path / "sw" / "sweep_summary.json").exists()

    def test_bad_sweep_values(self, tmp_path, capsys):
        _, gt_path = make_scene(tmp_path)
        code = main(
            ["pipeline", "--gt", str(gt_path), "--out-dir", str(tmp_path / "sw"),
             "--sweep", "96,abc"]
        )
        assert code == 2
        stderr_json(capsys)
