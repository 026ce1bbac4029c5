"""Per-tile detectors: a synthetic noise-model detector and a subprocess
plugin protocol for external ones.

All detectors consume one square tile and emit tile-local boxes in
[0, side] x [0, side]. The synthetic detector perturbs ground truth with
a configurable noise profile and is fully deterministic for a given
(profile seed, tile id) pair, independent of processing order.
"""

from __future__ import annotations

import json
import math
import random
import subprocess
from dataclasses import dataclass
from typing import Sequence

from .errors import PluginError, ProtocolError, ValidationError
from .geometry import BBox, intersection
from .poisson import derive_seed
from .tiling import Tile

# A gt box must be at least this visible (intersection area over own
# area) inside a tile for the synthetic detector to consider it.
DEFAULT_VISIBILITY = 0.25


@dataclass(frozen=True)
class ScoreModel:
    """Gaussian confidence model, clamped into [0, 1] after sampling."""

    true_mean: float = 0.8
    true_sigma: float = 0.1
    spurious_mean: float = 0.3
    spurious_sigma: float = 0.1

    def __post_init__(self) -> None:
        if self.true_sigma < 0 or self.spurious_sigma < 0:
            raise ValidationError("score sigmas must be non-negative")


@dataclass(frozen=True)
class NoiseProfile:
    """Corruption applied by the synthetic detector.

    Attributes:
        jitter_sigma: Gaussian sigma in pixels added to each box edge.
        miss_rate: Probability in [0, 1) of dropping a visible gt box.
        spurious_rate: Expected number of false boxes per tile (Poisson).
        scale_floor: Relative size (sqrt(box area) / tile side) below
            which detection probability falls off quadratically; 0
            disables the effect. Models small objects vanishing at
            coarse input scale.
        visibility: Minimum visible fraction for a gt box to be eligible.
        score_model: Confidence distribution for emitted boxes.
        seed: Base seed; each tile derives its own stream from it.

    The all-defaults profile (zero jitter, zero miss, zero spurious, zero
    scale_floor) is the identity: eligible gt boxes come back clipped to
    the tile, bit-exact, with their original scores.
    """

    jitter_sigma: float = 0.0
    miss_rate: float = 0.0
    spurious_rate: float = 0.0
    scale_floor: float = 0.0
    visibility: float = DEFAULT_VISIBILITY
    score_model: ScoreModel = ScoreModel()
    seed: int = 0

    def __post_init__(self) -> None:
        if self.jitter_sigma < 0:
            raise ValidationError(f"jitter_sigma must be >= 0, got {self.jitter_sigma}")
        if not 0.0 <= self.miss_rate < 1.0:
            raise ValidationError(f"miss_rate must be in [0, 1), got {self.miss_rate}")
        if self.spurious_rate < 0:
            raise ValidationError(
                f"spurious_rate must be >= 0, got {self.spurious_rate}"
            )
        if self.scale_floor < 0:
            raise ValidationError(f"scale_floor must be >= 0, got {self.scale_floor}")
        if not 0.0 <= self.visibility <= 1.0:
            raise ValidationError(
                f"visibility must be in [0, 1], got {self.visibility}"
            )

    @property
    def is_identity(self) -> bool:
        return (
            self.jitter_sigma == 0.0
            and self.miss_rate == 0.0
            and self.spurious_rate == 0.0
            and self.scale_floor == 0.0
        )


@dataclass(frozen=True)
class DetectorSpec:
    """One detector in an ensemble.

    ``kind`` is "synthetic" (uses ``profile``) or "plugin" (spawns
    ``command`` and speaks the line protocol, see run_plugin). ``weight``
    scales this detector's scores during ensemble fusion.
    """

    name: str
    kind: str = "synthetic"
    profile: NoiseProfile = NoiseProfile()
    command: tuple[str, ...] = ()
    weight: float = 1.0

    def __post_init__(self) -> None:
        if not self.name:
            raise ValidationError("detector name must be non-empty")
        if self.kind not in ("synthetic", "plugin"):
            raise ValidationError(f"unknown detector kind {self.kind!r}")
        if self.kind == "plugin" and not self.command:
            raise ValidationError(f"plugin detector {self.name!r} needs a command")
        if not self.weight > 0:
            raise ValidationError(f"detector weight must be positive, got {self.weight}")


@dataclass(frozen=True)
class DetectionSet:
    """Boxes one detector produced for one tile.

    ``frame`` records the coordinate frame: "local" (tile coordinates)
    straight out of a detector, "global" after remapping.
    """

    detector_name: str
    tile_id: int
    frame: str
    boxes: tuple[BBox, ...]

    def __post_init__(self) -> None:
        if self.frame not in ("local", "global"):
            raise ValidationError(f"unknown coordinate frame {self.frame!r}")


@dataclass(frozen=True)
class TileRasterRef:
    """Pointer to one extracted tile raster on disk, for plugin input."""

    tile_id: int
    side: int
    raster_path: str


def _gauss(rng: random.Random, mu: float, sigma: float) -> float:
    # Box-Muller on rng.random() only; random.Random.gauss() is avoided
    # because only the random() stream is documented as stable.
    u1 = 1.0 - rng.random()
    u2 = rng.random()
    return mu + sigma * math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


def _poisson_count(rng: random.Random, lam: float) -> int:
    # Knuth's product-of-uniforms method; fine for the small rates used here.
    if lam <= 0.0:
        return 0
    limit = math.exp(-lam)
    count = 0
    prod = rng.random()
    while prod > limit:
        count += 1
        prod *= rng.random()
    return count


def _rand_index(rng: random.Random, n: int) -> int:
    return min(int(rng.random() * n), n - 1)


def _clamp01(value: float) -> float:
    return 0.0 if value < 0.0 else (1.0 if value > 1.0 else value)


def synthetic_detect(
    gt_boxes: Sequence[BBox],
    tile: Tile,
    profile: NoiseProfile,
    detector_name: str = "synthetic",
) -> DetectionSet:
    """Run the synthetic detector on one tile.

    Ground truth is given in global image coordinates. Boxes visible in
    the tile (visible fraction >= profile.visibility) are clipped to the
    tile, moved to local coordinates, then pushed through the noise
    model: scale-dependent and uniform misses, edge jitter (re-clamped to
    the tile), Gaussian confidence. Spurious boxes are appended last.
    With the identity profile the eligible boxes come back bit-exact with
    their original scores.

    The random stream is derived from (profile.seed, tile.tile_id), so
    results do not depend on the order tiles are processed in.
    """
    rng = random.Random(derive_seed(profile.seed, "tile", tile.tile_id))
    side = float(tile.side)
    tile_rect = BBox(
        float(tile.origin_x),
        float(tile.origin_y),
        tile.origin_x + side,
        tile.origin_y + side,
    )
    out: list[BBox] = []
    for gt in gt_boxes:
        if gt.area <= 0.0:
            continue
        visible = intersection(gt, tile_rect)
        if visible is None:
            continue
        if visible.area / gt.area < profile.visibility:
            continue
        local = visible.translate(-tile.origin_x, -tile.origin_y)
        if profile.is_identity:
            out.append(local)
            continue
        p_keep = 1.0 - profile.miss_rate
        if profile.scale_floor > 0.0:
            rel = math.sqrt(local.area) / side
            p_keep *= min(1.0, (rel / profile.scale_floor) ** 2)
        if rng.random() >= p_keep:
            continue
        x0, y0, x1, y1 = local.x_min, local.y_min, local.x_max, local.y_max
        if profile.jitter_sigma > 0.0:
            s = profile.jitter_sigma
            x0 += _gauss(rng, 0.0, s)
            x1 += _gauss(rng, 0.0, s)
            y0 += _gauss(rng, 0.0, s)
            y1 += _gauss(rng, 0.0, s)
            x0, x1 = min(x0, x1), max(x0, x1)
            y0, y1 = min(y0, y1), max(y0, y1)
            x0 = min(max(x0, 0.0), side)
            x1 = min(max(x1, 0.0), side)
            y0 = min(max(y0, 0.0), side)
            y1 = min(max(y1, 0.0), side)
            if x1 - x0 <= 0.0 or y1 - y0 <= 0.0:
                continue
        score = _clamp01(
            _gauss(rng, profile.score_model.true_mean, profile.score_model.true_sigma)
        )
        out.append(BBox(x0, y0, x1, y1, class_id=gt.class_id, score=score))

    classes = sorted({b.class_id for b in gt_boxes}) or [0]
    for _ in range(_poisson_count(rng, profile.spurious_rate)):
        hi = max(4.0, side / 4.0)
        w = 2.0 + rng.random() * (hi - 2.0)
        h = 2.0 + rng.random() * (hi - 2.0)
        cx = rng.random() * side
        cy = rng.random() * side
        x0 = min(max(cx - w / 2.0, 0.0), side)
        x1 = min(max(cx + w / 2.0, 0.0), side)
        y0 = min(max(cy - h / 2.0, 0.0), side)
        y1 = min(max(cy + h / 2.0, 0.0), side)
        if x1 - x0 <= 0.0 or y1 - y0 <= 0.0:
            continue
        score = _clamp01(
            _gauss(
                rng,
                profile.score_model.spurious_mean,
                profile.score_model.spurious_sigma,
            )
        )
        out.append(
            BBox(x0, y0, x1, y1, class_id=classes[_rand_index(rng, len(classes))],
                 score=score)
        )

    return DetectionSet(
        detector_name=detector_name,
        tile_id=tile.tile_id,
        frame="local",
        boxes=tuple(out),
    )


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ProtocolError(message)


def _as_float(value: object, what: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ProtocolError(f"{what} must be a number, got {value!r}")
    return float(value)


def _parse_box(obj: object, side: int, where: str) -> BBox:
    _require(isinstance(obj, dict), f"{where}: box must be an object")
    assert isinstance(obj, dict)
    x_min = _as_float(obj.get("x_min"), f"{where}: x_min")
    y_min = _as_float(obj.get("y_min"), f"{where}: y_min")
    x_max = _as_float(obj.get("x_max"), f"{where}: x_max")
    y_max = _as_float(obj.get("y_max"), f"{where}: y_max")
    class_id = obj.get("class_id", 0)
    _require(
        isinstance(class_id, int) and not isinstance(class_id, bool),
        f"{where}: class_id must be an integer",
    )
    score = _as_float(obj.get("score", 1.0), f"{where}: score")
    _require(
        0.0 <= x_min <= x_max <= side and 0.0 <= y_min <= y_max <= side,
        f"{where}: box ({x_min}, {y_min}, {x_max}, {y_max}) "
        f"outside tile bounds [0, {side}]",
    )
    _require(0.0 <= score <= 1.0, f"{where}: score {score} outside [0, 1]")
    try:
        return BBox(x_min, y_min, x_max, y_max, class_id=int(class_id), score=score)
    except ValidationError as exc:
        raise ProtocolError(f"{where}: {exc}") from exc


def run_plugin(
    spec: DetectorSpec,
    refs: Sequence[TileRasterRef],
    timeout: float = 300.0,
) -> list[DetectionSet]:
    """Run an external detector over a batch of tiles.

    Protocol: one JSON object per line on stdin,
    ``{"tile_id": int, "side": int, "raster": path}``, stdin then closed;
    the plugin answers with one JSON object per line on stdout,
    ``{"tile_id": int, "boxes": [{"x_min", "y_min", "x_max", "y_max",
    "class_id", "score"}, ...]}``, in any order, exactly one line per
    requested tile. All text is UTF-8.

    Raises:
        PluginError: process could not start, timed out, or exited non-zero.
        ProtocolError: response malformed, incomplete, duplicated, or
            containing out-of-bounds geometry.
    """
    if spec.kind != "plugin":
        raise ValidationError(f"detector {spec.name!r} is not a plugin")
    request = "".join(
        json.dumps(
            {"tile_id": ref.tile_id, "side": ref.side, "raster": str(ref.raster_path)}
        )
        + "\n"
        for ref in refs
    )
    try:
        proc = subprocess.run(
            list(spec.command),
            input=request,
            capture_output=True,
            encoding="utf-8",
            timeout=timeout,
        )
    except FileNotFoundError as exc:
        raise PluginError(f"plugin {spec.name!r}: command not found: {exc}") from exc
    except subprocess.TimeoutExpired as exc:
        raise PluginError(
            f"plugin {spec.name!r}: timed out after {timeout}s"
        ) from exc
    if proc.returncode != 0:
        tail = (proc.stderr or "").strip().splitlines()[-5:]
        raise PluginError(
            f"plugin {spec.name!r} exited with code {proc.returncode}"
            + (": " + " | ".join(tail) if tail else "")
        )

    pending = {ref.tile_id: ref for ref in refs}
    by_id: dict[int, DetectionSet] = {}
    for line_no, line in enumerate(proc.stdout.splitlines(), start=1):
        if not line.strip():
            continue
        where = f"plugin {spec.name!r} stdout line {line_no}"
        try:
            payload = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"{where}: invalid JSON: {exc}") from exc
        _require(isinstance(payload, dict), f"{where}: expected an object")
        tile_id = payload.get("tile_id")
        _require(
            isinstance(tile_id, int) and not isinstance(tile_id, bool),
            f"{where}: tile_id must be an integer",
        )
        _require(tile_id in pending, f"{where}: unrequested tile_id {tile_id}")
        _require(tile_id not in by_id, f"{where}: duplicate tile_id {tile_id}")
        boxes = payload.get("boxes")
        _require(isinstance(boxes, list), f"{where}: boxes must be a list")
        side = pending[tile_id].side
        parsed = tuple(
            _parse_box(b, side, f"{where} tile {tile_id} box {i}")
            for i, b in enumerate(boxes)
        )
        by_id[tile_id] = DetectionSet(
            detector_name=spec.name, tile_id=tile_id, frame="local", boxes=parsed
        )
    missing = [ref.tile_id for ref in refs if ref.tile_id not in by_id]
    if missing:
        raise ProtocolError(
            f"plugin {spec.name!r}: no response for tile ids "
            f"{missing[:10]}{'...' if len(missing) > 10 else ''}"
        )
    return [by_id[ref.tile_id] for ref in refs]
