"""Axis-aligned bounding box arithmetic: IoU, enclosing boxes, EIoU loss.

Boxes live in continuous pixel coordinates. No inclusive/exclusive pixel
edge convention is applied; a box is the closed rectangle
[x_min, x_max] x [y_min, y_max]. Zero-width and zero-height boxes are
legal, negative extents are not.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .errors import ValidationError

# Guard for near-zero denominators in the EIoU aspect terms.
EPS = 1e-9


@dataclass(frozen=True)
class BBox:
    """One detection or annotation: a rectangle plus class id and confidence.

    Attributes:
        x_min: Left edge in pixels.
        y_min: Top edge in pixels.
        x_max: Right edge, must be >= x_min.
        y_max: Bottom edge, must be >= y_min.
        class_id: Non-negative integer category label.
        score: Confidence in [0, 1]. Ground truth conventionally uses 1.0.
    """

    x_min: float
    y_min: float
    x_max: float
    y_max: float
    class_id: int = 0
    score: float = 1.0

    def __post_init__(self) -> None:
        if self.x_max < self.x_min or self.y_max < self.y_min:
            raise ValidationError(
                f"box has negative extent: ({self.x_min}, {self.y_min}, "
                f"{self.x_max}, {self.y_max})"
            )
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"score {self.score} outside [0, 1]")
        if self.class_id < 0:
            raise ValidationError(f"negative class_id {self.class_id}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)

    def translate(self, dx: float, dy: float) -> "BBox":
        """Return a copy shifted by (dx, dy); class and score are preserved."""
        return replace(
            self,
            x_min=self.x_min + dx,
            y_min=self.y_min + dy,
            x_max=self.x_max + dx,
            y_max=self.y_max + dy,
        )

    def same_coords(self, other: "BBox") -> bool:
        """True when the two rectangles coincide exactly (class and score ignored)."""
        return (
            self.x_min == other.x_min
            and self.y_min == other.y_min
            and self.x_max == other.x_max
            and self.y_max == other.y_max
        )


def intersection_area(a: BBox, b: BBox) -> float:
    """Area of the overlap of two boxes, 0.0 when they do not overlap."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    if iw <= 0.0:
        return 0.0
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ih <= 0.0:
        return 0.0
    return iw * ih


def intersection(a: BBox, b: BBox) -> BBox | None:
    """Overlap rectangle of two boxes, or None when it has zero area.

    The result carries the class id and score of ``a``.
    """
    x_min = max(a.x_min, b.x_min)
    y_min = max(a.y_min, b.y_min)
    x_max = min(a.x_max, b.x_max)
    y_max = min(a.y_max, b.y_max)
    if x_max <= x_min or y_max <= y_min:
        return None
    return BBox(x_min, y_min, x_max, y_max, class_id=a.class_id, score=a.score)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes.

    Returns:
        inter / (area_a + area_b - inter), or 0.0 when the union has zero
        area (two coincident degenerate boxes).
    """
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def enclosing_box(a: BBox, b: BBox) -> BBox:
    """Smallest box containing both inputs; class and score come from ``a``."""
    return BBox(
        min(a.x_min, b.x_min),
        min(a.y_min, b.y_min),
        max(a.x_max, b.x_max),
        max(a.y_max, b.y_max),
        class_id=a.class_id,
        score=a.score,
    )


def eiou_loss(a: BBox, b: BBox, eps: float = EPS) -> float:
    """EIoU loss between two boxes: 1 - IoU plus center and shape penalties.

    The penalty terms are the squared center distance over the squared
    diagonal of the smallest enclosing box, plus the squared width and
    height differences over the squared enclosing width and height. Each
    denominator is floored at ``eps``. Identical rectangles give exactly
    0.0; the loss grows monotonically as one box translates away from the
    other.
    """
    if a.same_coords(b):
        return 0.0
    cw = max(a.x_max, b.x_max) - min(a.x_min, b.x_min)
    ch = max(a.y_max, b.y_max) - min(a.y_min, b.y_min)
    cw2 = max(cw * cw, eps)
    ch2 = max(ch * ch, eps)
    c2 = max(cw * cw + ch * ch, eps)
    ax = (a.x_min + a.x_max) / 2.0
    ay = (a.y_min + a.y_max) / 2.0
    bx = (b.x_min + b.x_max) / 2.0
    by = (b.y_min + b.y_max) / 2.0
    rho2 = (ax - bx) * (ax - bx) + (ay - by) * (ay - by)
    dw = a.width - b.width
    dh = a.height - b.height
    return (1.0 - iou(a, b)) + rho2 / c2 + (dw * dw) / cw2 + (dh * dh) / ch2
