"""Shared helpers for the test suite.

Randomized tests draw from seeded random.Random instances so every run
is reproducible; helpers here build boxes and scenes with controlled
size, placement, and score distributions.
"""

from __future__ import annotations

import random
from pathlib import Path

from tiledetect.geometry import BBox

PLUGIN_DIR = Path(__file__).parent / "plugins"


def rand_box(
    rng: random.Random,
    width: float,
    height: float,
    min_size: float = 2.0,
    max_size: float = 50.0,
    classes: int = 3,
    quantum: float = 0.0,
) -> BBox:
    """One random box fully inside a width x height frame.

    With quantum > 0 all coordinates snap to that grid (pass 1/256 for
    values that survive float translation exactly).
    """
    w = min_size + rng.random() * (max_size - min_size)
    h = min_size + rng.random() * (max_size - min_size)
    x0 = rng.random() * (width - w)
    y0 = rng.random() * (height - h)
    x1, y1 = x0 + w, y0 + h
    if quantum > 0.0:
        x0 = round(x0 / quantum) * quantum
        y0 = round(y0 / quantum) * quantum
        x1 = round(x1 / quantum) * quantum
        y1 = round(y1 / quantum) * quantum
        if x1 <= x0:
            x1 = x0 + quantum
        if y1 <= y0:
            y1 = y0 + quantum
    return BBox(
        x0,
        y0,
        x1,
        y1,
        class_id=min(int(rng.random() * classes), classes - 1),
        score=rng.random(),
    )


def rand_boxes(
    rng: random.Random,
    count: int,
    width: float,
    height: float,
    **kwargs,
) -> list[BBox]:
    return [rand_box(rng, width, height, **kwargs) for _ in range(count)]


def score_ladder(boxes: list[BBox], distinct: bool, rng: random.Random) -> list[BBox]:
    """Reassign scores: all-distinct or drawn from a tiny pool (forcing ties)."""
    from dataclasses import replace

    out = []
    for b in boxes:
        if distinct:
            score = rng.random()
        else:
            score = [0.3, 0.5, 0.9][min(int(rng.random() * 3), 2)]
        out.append(replace(b, score=score))
    return out
