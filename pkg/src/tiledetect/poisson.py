"""Poisson disk sampling on a rectangle (Bridson's grid-accelerated method).

Every returned point keeps at least the requested distance r to every
other point, and the sample is maximal in the dart-throwing sense: the
algorithm only retires a point after k consecutive failed attempts to
place a neighbor around it.

Determinism: sampling consumes only ``random.Random.random()`` (and
arithmetic on its output), whose sequence for a given seed is stable
across Python versions, so identical inputs give identical point sets
anywhere.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

# Attempts around an active point before it is retired.
DEFAULT_ATTEMPTS = 30


@dataclass(frozen=True)
class SampleDomain:
    """Rectangle [0, width] x [0, height] that points are drawn from."""

    width: float
    height: float

    def __post_init__(self) -> None:
        if not (self.width > 0 and self.height > 0):
            raise ValidationError(
                f"domain sides must be positive, got {self.width} x {self.height}"
            )

    @property
    def area(self) -> float:
        return self.width * self.height


@dataclass(frozen=True)
class PointSet:
    """Sampling result: the points plus the parameters that produced them."""

    points: tuple[tuple[float, float], ...]
    r: float
    seed: int


def derive_seed(base: int, *context: object) -> int:
    """Derive a stable 63-bit sub-seed from a base seed and context labels.

    Hash based (SHA-256), so independent of process hash randomization and
    platform word size. Used to give each image / tile / stage its own
    reproducible stream.
    """
    text = "/".join([str(base), *(str(part) for part in context)])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def _rand_index(rng: random.Random, n: int) -> int:
    # Uniform int in [0, n) built from rng.random(); min() guards the
    # (measure-zero) case rng.random() == 1.0 scaled onto n exactly.
    return min(int(rng.random() * n), n - 1)


def sample_poisson(
    domain: SampleDomain,
    r: float,
    k: int = DEFAULT_ATTEMPTS,
    seed: int = 0,
) -> PointSet:
    """Sample points from ``domain`` with pairwise distance >= ``r``.

    Bridson's algorithm: a background grid with cell side r/sqrt(2) (at
    most one point fits per cell) makes each candidate check touch only
    the 5x5 cell neighborhood. New candidates are drawn uniformly from
    the annulus [r, 2r) around a randomly chosen active point; the first
    acceptable candidate is taken, and the active point is retired after
    ``k`` consecutive rejections.

    Args:
        domain: Sampling rectangle.
        r: Minimum pairwise distance, must be positive.
        k: Candidate attempts per active point, must be >= 1.
        seed: Seed for the internal random stream.

    Returns:
        PointSet whose points all lie inside the domain and satisfy the
        distance bound. At least one point is always returned.
    """
    if not r > 0:
        raise ValidationError(f"min distance r must be positive, got {r}")
    if k < 1:
        raise ValidationError(f"attempt count k must be >= 1, got {k}")

    rng = random.Random(seed)
    w, h = domain.width, domain.height
    cell = r / math.sqrt(2.0)
    nx = max(1, int(math.ceil(w / cell)))
    ny = max(1, int(math.ceil(h / cell)))
    r2 = r * r

    # grid[ix * ny + iy] is the index into xs/ys of the point occupying
    # that cell, or -1. Flat list: faster than nested lists or dicts here.
    grid = [-1] * (nx * ny)
    xs: list[float] = []
    ys: list[float] = []
    active: list[int] = []

    def fits(x: float, y: float) -> bool:
        ix = int(x / cell)
        iy = int(y / cell)
        if ix >= nx:
            ix = nx - 1
        if iy >= ny:
            iy = ny - 1
        x0 = ix - 2 if ix >= 2 else 0
        x1 = ix + 3 if ix + 3 <= nx else nx
        y0 = iy - 2 if iy >= 2 else 0
        y1 = iy + 3 if iy + 3 <= ny else ny
        for gx in range(x0, x1):
            base = gx * ny
            for gy in range(y0, y1):
                j = grid[base + gy]
                if j >= 0:
                    dx = xs[j] - x
                    dy = ys[j] - y
                    if dx * dx + dy * dy < r2:
                        return False
        return True

    def insert(x: float, y: float) -> None:
        ix = min(int(x / cell), nx - 1)
        iy = min(int(y / cell), ny - 1)
        grid[ix * ny + iy] = len(xs)
        active.append(len(xs))
        xs.append(x)
        ys.append(y)

    insert(rng.random() * w, rng.random() * h)

    while active:
        slot = _rand_index(rng, len(active))
        i = active[slot]
        px, py = xs[i], ys[i]
        for _ in range(k):
            rad = r * (1.0 + rng.random())
            ang = 2.0 * math.pi * rng.random()
            x = px + rad * math.cos(ang)
            y = py + rad * math.sin(ang)
            if 0.0 <= x <= w and 0.0 <= y <= h and fits(x, y):
                insert(x, y)
                break
        else:
            # Retire by swap-with-last and pop: O(1), order irrelevant
            # because the next active point is chosen uniformly anyway.
            active[slot] = active[-1]
            active.pop()

    return PointSet(points=tuple(zip(xs, ys)), r=r, seed=seed)


def verify_min_distance(points: PointSet) -> bool:
    """Check every pairwise distance in a PointSet against its own r.

    Computed independently of the sampler's grid: plain pairwise squared
    distances (row-blocked so memory stays bounded for large sets).
    """
    pts = np.asarray(points.points, dtype=np.float64)
    n = len(pts)
    if n < 2:
        return True
    r2 = points.r * points.r
    block = 512
    for start in range(0, n, block):
        rows = pts[start : start + block]
        d2 = ((rows[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        # Mask the self-distances on the diagonal of this block.
        for i in range(len(rows)):
            d2[i, start + i] = np.inf
        if bool((d2 < r2).any()):
            return False
    return True
