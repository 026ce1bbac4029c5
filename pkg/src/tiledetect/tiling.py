"""Tile planning over large rasters and local/global coordinate remapping.

A plan places square tiles whose centers come from Poisson disk sampling,
then closes any remaining gaps with grid-aligned fallback tiles so that
every pixel of the image is covered by at least one tile. Coverage is
computed exactly in integer arithmetic, never estimated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .geometry import BBox, intersection
from .poisson import SampleDomain, sample_poisson

PROVENANCE_POISSON = "poisson"
PROVENANCE_FALLBACK = "fallback"


@dataclass(frozen=True)
class Tile:
    """One square window into the image.

    ``origin_x``/``origin_y`` are the top-left corner in image pixels.
    Origins are clamped into the image, so a tile only extends past the
    image edge when the image itself is smaller than the tile side.
    """

    tile_id: int
    origin_x: int
    origin_y: int
    side: int
    provenance: str = PROVENANCE_POISSON

    def __post_init__(self) -> None:
        if self.side < 1:
            raise ValidationError(f"tile side must be >= 1, got {self.side}")
        if self.origin_x < 0 or self.origin_y < 0:
            raise ValidationError(
                f"tile origin must be non-negative, got "
                f"({self.origin_x}, {self.origin_y})"
            )
        if self.provenance not in (PROVENANCE_POISSON, PROVENANCE_FALLBACK):
            raise ValidationError(f"unknown tile provenance {self.provenance!r}")


@dataclass(frozen=True)
class TilePlan:
    """A full set of tiles for one image, plus the planning parameters."""

    image_width: int
    image_height: int
    side: int
    r: float
    seed: int
    tiles: tuple[Tile, ...]
    coverage: float

    def __post_init__(self) -> None:
        if self.image_width < 1 or self.image_height < 1:
            raise ValidationError(
                f"image must be at least 1x1, got "
                f"{self.image_width}x{self.image_height}"
            )


def _coverage_cells(
    tiles: Sequence[Tile],
    width: int,
    height: int,
    extra_x: Sequence[int] = (),
    extra_y: Sequence[int] = (),
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Compressed occupancy grid over the union of tile edges.

    Cut lines are the (clamped) tile edges plus the image border plus any
    caller-supplied extra lines; between consecutive cuts coverage is
    constant, so a boolean matrix over the cut intervals represents
    coverage exactly. All coordinates are integers.
    """
    xs = {0, width}
    ys = {0, height}
    for t in tiles:
        xs.add(min(t.origin_x, width))
        xs.add(min(t.origin_x + t.side, width))
        ys.add(min(t.origin_y, height))
        ys.add(min(t.origin_y + t.side, height))
    xs.update(c for c in extra_x if 0 < c < width)
    ys.update(c for c in extra_y if 0 < c < height)
    cuts_x = np.array(sorted(xs), dtype=np.int64)
    cuts_y = np.array(sorted(ys), dtype=np.int64)
    covered = np.zeros((len(cuts_x) - 1, len(cuts_y) - 1), dtype=bool)
    for t in tiles:
        ix0 = int(np.searchsorted(cuts_x, min(t.origin_x, width)))
        ix1 = int(np.searchsorted(cuts_x, min(t.origin_x + t.side, width)))
        iy0 = int(np.searchsorted(cuts_y, min(t.origin_y, height)))
        iy1 = int(np.searchsorted(cuts_y, min(t.origin_y + t.side, height)))
        covered[ix0:ix1, iy0:iy1] = True
    return cuts_x, cuts_y, covered


def coverage_fraction(tiles: Sequence[Tile], width: int, height: int) -> float:
    """Exact fraction of image pixels lying under at least one tile.

    Integer interval arithmetic end to end: the result is exactly 1.0
    when and only when the tiles cover every pixel.
    """
    if width < 1 or height < 1:
        raise ValidationError(f"image must be at least 1x1, got {width}x{height}")
    cuts_x, cuts_y, covered = _coverage_cells(tiles, width, height)
    lx = np.diff(cuts_x)
    ly = np.diff(cuts_y)
    covered_area = int((lx[:, None] * ly[None, :])[covered].sum())
    return covered_area / (width * height)


def plan_tiles(
    width: int,
    height: int,
    side: int,
    r: float | None = None,
    k: int = 30,
    seed: int = 0,
) -> TilePlan:
    """Plan full-coverage square tiles over a width x height image.

    Tile centers are Poisson disk samples over the image rectangle with
    minimum spacing ``r`` (default side / 2, giving dense overlap).
    Centers are snapped to integer origins and clamped inside the image.
    Any pixels the sampled tiles miss are then covered by fallback tiles
    on a grid of stride ``side``, so the plan always reaches coverage 1.0.

    Args:
        width: Image width in pixels, >= 1.
        height: Image height in pixels, >= 1.
        side: Tile side in pixels, >= 1.
        r: Minimum center spacing; defaults to side / 2.
        k: Poisson sampling attempts per active point.
        seed: Seed for the center sampling stream.

    Returns:
        TilePlan with deterministic tile ids (sampled tiles first, in
        sampling order, then fallback tiles in row-major grid order).
    """
    if width < 1 or height < 1:
        raise ValidationError(f"image must be at least 1x1, got {width}x{height}")
    if side < 1:
        raise ValidationError(f"tile side must be >= 1, got {side}")
    if r is None:
        r = side / 2.0
    if not r > 0:
        raise ValidationError(f"min spacing r must be positive, got {r}")

    points = sample_poisson(SampleDomain(float(width), float(height)), r, k, seed)
    max_ox = max(0, width - side)
    max_oy = max(0, height - side)

    tiles: list[Tile] = []
    seen: set[tuple[int, int]] = set()
    for px, py in points.points:
        ox = min(max(int(round(px - side / 2.0)), 0), max_ox)
        oy = min(max(int(round(py - side / 2.0)), 0), max_oy)
        if (ox, oy) not in seen:
            seen.add((ox, oy))
            tiles.append(Tile(len(tiles), ox, oy, side, PROVENANCE_POISSON))

    # Close gaps: walk grid cells of stride `side`; any cell containing an
    # uncovered pixel gets one clamped tile, which covers the whole cell.
    cells_x = math.ceil(width / side)
    cells_y = math.ceil(height / side)
    grid_lines_x = [i * side for i in range(1, cells_x)]
    grid_lines_y = [j * side for j in range(1, cells_y)]
    cuts_x, cuts_y, covered = _coverage_cells(
        tiles, width, height, grid_lines_x, grid_lines_y
    )
    uncovered = ~covered
    for j in range(cells_y):
        ry0 = j * side
        ry1 = min(ry0 + side, height)
        iy0 = int(np.searchsorted(cuts_y, ry0))
        iy1 = int(np.searchsorted(cuts_y, ry1))
        for i in range(cells_x):
            rx0 = i * side
            rx1 = min(rx0 + side, width)
            ix0 = int(np.searchsorted(cuts_x, rx0))
            ix1 = int(np.searchsorted(cuts_x, rx1))
            if not uncovered[ix0:ix1, iy0:iy1].any():
                continue
            ox = min(rx0, max_ox)
            oy = min(ry0, max_oy)
            if (ox, oy) not in seen:
                seen.add((ox, oy))
                tiles.append(Tile(len(tiles), ox, oy, side, PROVENANCE_FALLBACK))

    cov = coverage_fraction(tiles, width, height)
    assert cov == 1.0, f"internal error: plan left coverage at {cov}"
    return TilePlan(
        image_width=width,
        image_height=height,
        side=side,
        r=float(r),
        seed=seed,
        tiles=tuple(tiles),
        coverage=cov,
    )


def remap_to_global(box: BBox, tile: Tile) -> BBox:
    """Translate a tile-local box into image coordinates.

    Pure translation by the tile origin; width, height, class and score
    are unchanged, and with float coordinates the translation is exact
    whenever origin and coordinates are exactly representable (integers
    and dyadic fractions in particular).

    Raises:
        ValidationError: the box does not lie within [0, side] x [0, side].
    """
    if (
        box.x_min < 0.0
        or box.y_min < 0.0
        or box.x_max > tile.side
        or box.y_max > tile.side
    ):
        raise ValidationError(
            f"local box ({box.x_min}, {box.y_min}, {box.x_max}, {box.y_max}) "
            f"outside tile {tile.tile_id} bounds [0, {tile.side}]"
        )
    return box.translate(tile.origin_x, tile.origin_y)


def remap_to_local(box: BBox, tile: Tile) -> BBox:
    """Translate an image-coordinate box into tile-local coordinates.

    Inverse of remap_to_global; the box must lie fully inside the tile.
    """
    x1 = tile.origin_x + tile.side
    y1 = tile.origin_y + tile.side
    if (
        box.x_min < tile.origin_x
        or box.y_min < tile.origin_y
        or box.x_max > x1
        or box.y_max > y1
    ):
        raise ValidationError(
            f"global box ({box.x_min}, {box.y_min}, {box.x_max}, {box.y_max}) "
            f"outside tile {tile.tile_id} rect "
            f"[{tile.origin_x}, {x1}] x [{tile.origin_y}, {y1}]"
        )
    return box.translate(-tile.origin_x, -tile.origin_y)


def extract_tile(raster: np.ndarray, tile: Tile) -> np.ndarray:
    """Cut the tile's pixels out of a (H, W[, C]) array.

    Always returns a side x side array. Area outside the image (possible
    only when the image is smaller than the tile) is zero-padded.
    """
    if raster.ndim not in (2, 3):
        raise ValidationError(f"raster must be 2-D or 3-D, got shape {raster.shape}")
    h, w = raster.shape[0], raster.shape[1]
    x0, y0 = tile.origin_x, tile.origin_y
    x1, y1 = x0 + tile.side, y0 + tile.side
    if x0 >= w or y0 >= h:
        raise ValidationError(
            f"tile {tile.tile_id} at ({x0}, {y0}) lies outside a {w}x{h} image"
        )
    if x1 <= w and y1 <= h:
        return raster[y0:y1, x0:x1].copy()
    out = np.zeros((tile.side, tile.side) + raster.shape[2:], dtype=raster.dtype)
    ch = min(h, y1) - y0
    cw = min(w, x1) - x0
    out[:ch, :cw] = raster[y0 : y0 + ch, x0 : x0 + cw]
    return out


def clip_to_image(box: BBox, width: int, height: int) -> BBox | None:
    """Intersect a box with the image rectangle.

    Returns None when the visible part has zero area; otherwise the
    clipped box with class and score preserved.
    """
    return intersection(box, BBox(0.0, 0.0, float(width), float(height)))
