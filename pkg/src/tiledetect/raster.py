"""Raster file I/O (PNG and TIFF) and box overlay rendering.

Arrays are numpy, shaped (H, W) for single-band images or (H, W, 3) for
RGB, dtype uint8 or uint16. Axis order follows numpy convention: the
first index is the row (y), the second the column (x).
"""

from __future__ import annotations

import os
from typing import Iterable

import numpy as np
from PIL import Image, ImageDraw

from .errors import RasterIOError
from .geometry import BBox

_LOAD_MODES = {"L", "I;16", "RGB"}

# Fixed palette for overlay drawing, indexed by class_id modulo its length.
_PALETTE: tuple[tuple[int, int, int], ...] = (
    (230, 25, 75),
    (60, 180, 75),
    (255, 225, 25),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
    (240, 50, 230),
)


def load_raster(path: str | os.PathLike) -> np.ndarray:
    """Read a PNG or TIFF into an array.

    Single-band files come back as (H, W) uint8 or uint16, color files as
    (H, W, 3) uint8. Palette and RGBA inputs are converted to RGB.

    Raises:
        RasterIOError: file missing, undecodable, or an unsupported mode.
    """
    try:
        with Image.open(path) as img:
            mode = img.mode
            if mode in ("P", "RGBA", "CMYK", "LA"):
                img = img.convert("RGB")
                mode = "RGB"
            if mode == "I":
                # 32-bit integer grayscale, e.g. some 16-bit TIFF readers.
                arr = np.asarray(img, dtype=np.int64)
                if arr.min() < 0 or arr.max() > 0xFFFF:
                    raise RasterIOError(
                        f"{path}: integer raster exceeds 16-bit range"
                    )
                return arr.astype(np.uint16)
            if mode not in _LOAD_MODES:
                raise RasterIOError(f"{path}: unsupported image mode {mode!r}")
            return np.asarray(img)
    except RasterIOError:
        raise
    except FileNotFoundError as exc:
        raise RasterIOError(f"{path}: {exc.strerror or 'not found'}") from exc
    except OSError as exc:
        raise RasterIOError(f"{path}: cannot decode raster: {exc}") from exc


def _to_image(array: np.ndarray) -> Image.Image:
    arr = np.asarray(array)
    if arr.ndim == 2:
        if arr.dtype == np.uint8:
            return Image.fromarray(arr, mode="L")
        if arr.dtype == np.uint16:
            return Image.fromarray(arr, mode="I;16")
        raise RasterIOError(f"unsupported single-band dtype {arr.dtype}")
    if arr.ndim == 3 and arr.shape[2] == 3 and arr.dtype == np.uint8:
        return Image.fromarray(arr, mode="RGB")
    raise RasterIOError(
        f"unsupported array shape {arr.shape} / dtype {arr.dtype} for saving"
    )


def save_png(array: np.ndarray, path: str | os.PathLike) -> None:
    """Write an array as PNG. Encoding is deterministic for a given array."""
    img = _to_image(array)
    try:
        img.save(path, format="PNG")
    except OSError as exc:
        raise RasterIOError(f"{path}: cannot write PNG: {exc}") from exc


def save_tiff(array: np.ndarray, path: str | os.PathLike) -> None:
    """Write an array as uncompressed TIFF."""
    img = _to_image(array)
    try:
        img.save(path, format="TIFF")
    except OSError as exc:
        raise RasterIOError(f"{path}: cannot write TIFF: {exc}") from exc


def class_color(class_id: int) -> tuple[int, int, int]:
    """Deterministic RGB color for a class id."""
    return _PALETTE[class_id % len(_PALETTE)]


def render_overlay(
    image: np.ndarray,
    boxes: Iterable[BBox],
    line_width: int = 2,
    labels: bool = True,
) -> np.ndarray:
    """Draw boxes onto a copy of the image and return it as (H, W, 3) uint8.

    Single-band inputs are expanded to gray RGB first; uint16 inputs are
    rescaled to 8 bit for display. Colors are keyed by class id, and the
    optional label is "class:score" with two decimals.
    """
    arr = np.asarray(image)
    if arr.dtype == np.uint16:
        arr = (arr // 257).astype(np.uint8)
    if arr.ndim == 2:
        arr = np.stack([arr, arr, arr], axis=2)
    img = Image.fromarray(arr.copy(), mode="RGB")
    draw = ImageDraw.Draw(img)
    h, w = arr.shape[0], arr.shape[1]
    for box in boxes:
        color = class_color(box.class_id)
        x0 = max(0.0, min(box.x_min, w - 1.0))
        y0 = max(0.0, min(box.y_min, h - 1.0))
        x1 = max(x0, min(box.x_max, w - 1.0))
        y1 = max(y0, min(box.y_max, h - 1.0))
        draw.rectangle((x0, y0, x1, y1), outline=color, width=line_width)
        if labels:
            text = f"{box.class_id}:{box.score:.2f}"
            ty = y0 - 12 if y0 >= 12 else y1 + 2
            draw.text((x0 + 2, ty), text, fill=color)
    return np.asarray(img)
