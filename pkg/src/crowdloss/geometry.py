"""Axis-aligned box arithmetic: IoU, centers, angles, border distances.

Boxes use corner form (x1, y1, x2, y2) with strictly positive width and
height. All operations are pure functions and safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InvalidInputError


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InvalidInputError(f"non-finite point ({self.x}, {self.y})")


@dataclass(frozen=True)
class BBox:
    """Axis-aligned rectangle in corner form.

    Zero-area boxes are rejected at construction so downstream code never
    has to branch on degeneracy.
    """

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise InvalidInputError(f"non-finite box coordinates {coords}")
        if self.x2 <= self.x1 or self.y2 <= self.y1:
            raise InvalidInputError(f"degenerate box {coords}: requires x2 > x1 and y2 > y1")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


def center(b: BBox) -> Point:
    """Center point of a box."""
    return Point((b.x1 + b.x2) / 2.0, (b.y1 + b.y2) / 2.0)


def intersection_area(a: BBox, b: BBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    return iw * ih


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes.

    Returns a value in [0, 1]; 0 for disjoint boxes, 1 only for identical
    ones. Symmetric in its arguments.
    """
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    union = a.area + b.area - inter
    return inter / union


def cos_angle_at(b: Point, a: Point, c: Point) -> float:
    """Cosine of the angle at vertex ``b`` between rays toward ``a`` and ``c``.

    Uses the law of cosines on the center coordinates. If either ray has zero
    length the angle is undefined; by convention the result is 1 (full
    effective force). The value is clamped to [-1, 1] against rounding.
    """
    ux, uy = a.x - b.x, a.y - b.y
    vx, vy = c.x - b.x, c.y - b.y
    nu = math.hypot(ux, uy)
    nv = math.hypot(vx, vy)
    if nu == 0.0 or nv == 0.0:
        return 1.0
    cos = (ux * vx + uy * vy) / (nu * nv)
    return max(-1.0, min(1.0, cos))


def border_distance(g: BBox, p: BBox) -> float:
    """Normalized distance of ``p``'s center from ``g``'s center, border-relative.

    With l, r, t, b the unsigned distances from the center of ``p`` to the
    four border lines of ``g``::

        s = sqrt(f_x * f_y)
        f_x = 1 - min(l, r) / (W_g / 2)
        f_y = 1 - min(t, b) / (H_g / 2)

    Each factor is clamped to [0, 1] before the product, so s is 0 at the
    center of ``g`` (and again once the center strays half an extent past a
    border) and 1 when the center sits on a corner of ``g``.
    """
    cx = (p.x1 + p.x2) / 2.0
    cy = (p.y1 + p.y2) / 2.0
    return border_distance_point(g, cx, cy)


def border_distance_point(g: BBox, cx: float, cy: float) -> float:
    """``border_distance`` evaluated at an explicit center point."""
    fx = _border_factor(cx, g.x1, g.x2)
    fy = _border_factor(cy, g.y1, g.y2)
    return math.sqrt(fx * fy)


def _border_factor(c: float, lo: float, hi: float) -> float:
    half = (hi - lo) / 2.0
    m = min(abs(c - lo), abs(c - hi))
    f = 1.0 - m / half
    return max(0.0, min(1.0, f))


def contains_center(g: BBox, p: BBox) -> bool:
    """True iff the center of ``p`` lies inside ``g`` (boundary included)."""
    cx = (p.x1 + p.x2) / 2.0
    cy = (p.y1 + p.y2) / 2.0
    return g.x1 <= cx <= g.x2 and g.y1 <= cy <= g.y2
