"""Synthetic data utilities: scene generation, crop sampling, dataset mixing.

Everything here is seed-deterministic: the same inputs and seed produce
the same scenes, crops, and manifests on any platform. Randomness flows
through random.Random using only its random() primitive.
"""

from __future__ import annotations

import math
import os
import random
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .evaluation import AnnotationSet
from .formats import read_json, write_json
from .geometry import BBox, intersection, intersection_area
from .poisson import derive_seed
from .raster import class_color
from .tiling import Tile, extract_tile

DEFAULT_CROP_VISIBILITY = 0.25


@dataclass(frozen=True)
class MixManifest:
    """A blended training list: original and synthetic items with the
    realized counts.

    ``items`` holds (source, name) pairs where source is "original" or
    "synthetic", in the final shuffled order.
    """

    ratio: float
    total: int
    n_original: int
    n_synthetic: int
    seed: int
    items: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        if self.n_original + self.n_synthetic != self.total:
            raise ValidationError("manifest counts do not add up")


def _rand_index(rng: random.Random, n: int) -> int:
    return min(int(rng.random() * n), n - 1)


def generate_annotations(
    width: int,
    height: int,
    count: int,
    min_size: float,
    max_size: float,
    num_classes: int = 1,
    seed: int = 0,
    min_gap: float = 0.0,
    max_attempts: int = 10_000,
) -> AnnotationSet:
    """Place ``count`` random boxes fully inside a width x height image.

    Sizes are uniform in [min_size, max_size] per axis. With min_gap > 0
    boxes are rejection-sampled so that no two boxes come closer than
    min_gap pixels on both axes (in particular they cannot overlap).

    Raises:
        ValidationError: placement failed within max_attempts tries,
            or the sizes do not fit the image.
    """
    if count < 0:
        raise ValidationError(f"count must be >= 0, got {count}")
    if not 0 < min_size <= max_size:
        raise ValidationError(f"bad size range [{min_size}, {max_size}]")
    if max_size > width or max_size > height:
        raise ValidationError(
            f"max_size {max_size} does not fit a {width}x{height} image"
        )
    if num_classes < 1:
        raise ValidationError(f"num_classes must be >= 1, got {num_classes}")
    rng = random.Random(derive_seed(seed, "annotations"))
    boxes: list[BBox] = []
    attempts = 0
    while len(boxes) < count:
        if attempts >= max_attempts:
            raise ValidationError(
                f"could not place {count} boxes with gap {min_gap} "
                f"in {width}x{height} after {max_attempts} attempts"
            )
        attempts += 1
        w = min_size + rng.random() * (max_size - min_size)
        h = min_size + rng.random() * (max_size - min_size)
        x0 = rng.random() * (width - w)
        y0 = rng.random() * (height - h)
        cand = BBox(
            x0, y0, x0 + w, y0 + h,
            class_id=_rand_index(rng, num_classes),
        )
        if min_gap > 0.0:
            grown = BBox(
                max(0.0, cand.x_min - min_gap),
                max(0.0, cand.y_min - min_gap),
                min(float(width), cand.x_max + min_gap),
                min(float(height), cand.y_max + min_gap),
            )
            if any(intersection_area(grown, b) > 0.0 for b in boxes):
                continue
        boxes.append(cand)
    return AnnotationSet(
        image_id=f"synthetic-{seed}",
        width=width,
        height=height,
        boxes=tuple(boxes),
    )


def generate_scene(
    width: int,
    height: int,
    ann: AnnotationSet,
    seed: int = 0,
    background: int = 24,
) -> np.ndarray:
    """Render annotations as filled rectangles on a speckled background.

    Returns (H, W, 3) uint8. Purely cosmetic: detectors under test that
    actually read pixels get something to look at, and overlays are
    recognizable. Deterministic for a given seed.
    """
    rng = random.Random(derive_seed(seed, "scene"))
    img = np.full((height, width, 3), background, dtype=np.uint8)
    # Sparse speckle so tiles are visually distinct without costing much.
    n_speckle = max(1, (width * height) // 4096)
    for _ in range(n_speckle):
        x = _rand_index(rng, width)
        y = _rand_index(rng, height)
        img[y, x] = background + 16
    for b in ann.boxes:
        color = class_color(b.class_id)
        x0 = max(0, min(int(b.x_min), width - 1))
        y0 = max(0, min(int(b.y_min), height - 1))
        x1 = max(x0 + 1, min(int(math.ceil(b.x_max)), width))
        y1 = max(y0 + 1, min(int(math.ceil(b.y_max)), height))
        img[y0:y1, x0:x1] = color
    return img


def sample_crops(
    raster: np.ndarray,
    ann: AnnotationSet,
    crop_side: int,
    count: int,
    seed: int = 0,
    min_visibility: float = DEFAULT_CROP_VISIBILITY,
) -> list[tuple[np.ndarray, AnnotationSet]]:
    """Cut training crops around randomly chosen annotated objects.

    Each crop picks an anchor box uniformly at random and a uniform crop
    origin among those keeping the whole anchor inside the crop (the crop
    is centered on the anchor when the anchor is larger than the crop).
    Labels are the gt boxes at least ``min_visibility`` visible in the
    crop, clipped and rebased to crop coordinates. With no annotations
    the crops are uniform random windows with empty label sets.

    Returns (crop array, crop annotations) pairs; crops are always
    crop_side x crop_side, zero-padded if the image is smaller.
    """
    if crop_side < 1:
        raise ValidationError(f"crop_side must be >= 1, got {crop_side}")
    if count < 0:
        raise ValidationError(f"count must be >= 0, got {count}")
    if raster.shape[0] != ann.height or raster.shape[1] != ann.width:
        raise ValidationError(
            f"raster is {raster.shape[1]}x{raster.shape[0]} but annotations "
            f"say {ann.width}x{ann.height}"
        )
    rng = random.Random(derive_seed(seed, "crops"))
    width, height = ann.width, ann.height
    max_ox = max(0, width - crop_side)
    max_oy = max(0, height - crop_side)
    out: list[tuple[np.ndarray, AnnotationSet]] = []
    for idx in range(count):
        if ann.boxes:
            anchor = ann.boxes[_rand_index(rng, len(ann.boxes))]
            lo = max(0, int(math.ceil(anchor.x_max)) - crop_side)
            hi = min(max_ox, int(math.floor(anchor.x_min)))
            if lo > hi:
                cx = (anchor.x_min + anchor.x_max) / 2.0
                ox = min(max(int(round(cx - crop_side / 2.0)), 0), max_ox)
            else:
                ox = lo + _rand_index(rng, hi - lo + 1)
            lo = max(0, int(math.ceil(anchor.y_max)) - crop_side)
            hi = min(max_oy, int(math.floor(anchor.y_min)))
            if lo > hi:
                cy = (anchor.y_min + anchor.y_max) / 2.0
                oy = min(max(int(round(cy - crop_side / 2.0)), 0), max_oy)
            else:
                oy = lo + _rand_index(rng, hi - lo + 1)
        else:
            ox = _rand_index(rng, max_ox + 1)
            oy = _rand_index(rng, max_oy + 1)
        window = Tile(idx, ox, oy, crop_side, "poisson")
        crop = extract_tile(raster, window)
        rect = BBox(float(ox), float(oy), float(ox + crop_side), float(oy + crop_side))
        labels: list[BBox] = []
        for b in ann.boxes:
            if b.area <= 0.0:
                continue
            vis = intersection(b, rect)
            if vis is None or vis.area / b.area < min_visibility:
                continue
            labels.append(vis.translate(-ox, -oy))
        out.append(
            (
                crop,
                AnnotationSet(
                    image_id=f"{ann.image_id}#crop{idx:04d}",
                    width=crop_side,
                    height=crop_side,
                    boxes=tuple(labels),
                ),
            )
        )
    return out


def mix_datasets(
    original: Sequence[str],
    synthetic: Sequence[str],
    ratio: float,
    total: int,
    seed: int = 0,
    with_replacement: bool = False,
) -> MixManifest:
    """Blend two item lists into one training manifest.

    ``ratio`` is the fraction of original items in the result; the
    realized count is round(ratio * total), so it never deviates from
    the exact target by more than one item. Items are sampled without
    replacement (a pool that is too small is an error unless
    ``with_replacement`` is set) and the combined list is shuffled.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValidationError(f"ratio must be in [0, 1], got {ratio}")
    if total < 0:
        raise ValidationError(f"total must be >= 0, got {total}")
    n_original = int(round(ratio * total))
    n_synthetic = total - n_original
    rng = random.Random(derive_seed(seed, "mix"))

    def pick(pool: Sequence[str], need: int, label: str) -> list[str]:
        if need == 0:
            return []
        if not pool:
            raise ValidationError(f"{label} pool is empty but {need} items needed")
        if with_replacement:
            return [pool[_rand_index(rng, len(pool))] for _ in range(need)]
        if need > len(pool):
            raise ValidationError(
                f"{label} pool has {len(pool)} items, {need} needed "
                f"(pass with_replacement to allow reuse)"
            )
        # Partial Fisher-Yates: deterministic sample without replacement.
        work = list(pool)
        for i in range(need):
            j = i + _rand_index(rng, len(work) - i)
            work[i], work[j] = work[j], work[i]
        return work[:need]

    items = [("original", name) for name in pick(original, n_original, "original")]
    items += [("synthetic", name) for name in pick(synthetic, n_synthetic, "synthetic")]
    for i in range(len(items) - 1, 0, -1):
        j = _rand_index(rng, i + 1)
        items[i], items[j] = items[j], items[i]
    return MixManifest(
        ratio=ratio,
        total=total,
        n_original=n_original,
        n_synthetic=n_synthetic,
        seed=seed,
        items=tuple(items),
    )


def save_manifest(manifest: MixManifest, path: str | os.PathLike) -> None:
    write_json(
        {
            "ratio": manifest.ratio,
            "total": manifest.total,
            "n_original": manifest.n_original,
            "n_synthetic": manifest.n_synthetic,
            "seed": manifest.seed,
            "items": [[source, name] for source, name in manifest.items],
        },
        path,
    )


def load_manifest(path: str | os.PathLike) -> MixManifest:
    data = read_json(path)
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: manifest must be a JSON object")
    try:
        return MixManifest(
            ratio=float(data["ratio"]),
            total=int(data["total"]),
            n_original=int(data["n_original"]),
            n_synthetic=int(data["n_synthetic"]),
            seed=int(data["seed"]),
            items=tuple((str(s), str(n)) for s, n in data["items"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: malformed manifest: {exc}") from exc
