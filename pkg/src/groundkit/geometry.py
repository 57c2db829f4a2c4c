"""Integer-pixel geometry: points, sizes, boxes, crop windows.

Boxes are ``[x1, y1, x2, y2]`` with both edges inclusive. Everything stored is an
integer pixel; distances are computed in real arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction


class GeometryError(ValueError):
    """Invalid geometric input."""


class DegenerateBoxError(GeometryError):
    """A distance was requested against a box with zero width or height."""


class PreconditionError(GeometryError):
    """An operation was called outside its documented domain."""


def _check_int(name: str, value) -> None:
    if isinstance(value, bool) or not isinstance(value, int):
        raise GeometryError(f"{name} must be an int, got {value!r}")


@dataclass(frozen=True)
class Point:
    x: int
    y: int

    def __post_init__(self):
        _check_int("x", self.x)
        _check_int("y", self.y)
        if self.x < 0 or self.y < 0:
            raise GeometryError(f"point coordinates must be >= 0, got ({self.x}, {self.y})")

    def as_tuple(self) -> tuple[int, int]:
        return (self.x, self.y)


@dataclass(frozen=True)
class Size:
    w: int
    h: int

    def __post_init__(self):
        _check_int("w", self.w)
        _check_int("h", self.h)
        if self.w <= 0 or self.h <= 0:
            raise GeometryError(f"size must be positive, got {self.w}x{self.h}")

    @classmethod
    def of_array(cls, array) -> "Size":
        """Size of a raster shaped ``(H, W)`` or ``(H, W, C)``."""
        return cls(int(array.shape[1]), int(array.shape[0]))


@dataclass(frozen=True)
class BBox:
    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        for name in ("x1", "y1", "x2", "y2"):
            _check_int(name, getattr(self, name))
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise GeometryError(f"inverted box {self.as_list()}")

    @classmethod
    def from_list(cls, values) -> "BBox":
        x1, y1, x2, y2 = values
        return cls(int(x1), int(y1), int(x2), int(y2))

    def as_list(self) -> list[int]:
        return [self.x1, self.y1, self.x2, self.y2]

    @property
    def width(self) -> int:
        return self.x2 - self.x1

    @property
    def height(self) -> int:
        return self.y2 - self.y1

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x1 + self.x2) / 2, (self.y1 + self.y2) / 2)

    @property
    def half_extents(self) -> tuple[float, float]:
        return (self.width / 2, self.height / 2)

    @property
    def is_degenerate(self) -> bool:
        return self.width == 0 or self.height == 0

    def within(self, image: Size) -> bool:
        return self.x1 >= 0 and self.y1 >= 0 and self.x2 <= image.w and self.y2 <= image.h


@dataclass(frozen=True)
class CropWindow:
    """A sub-rectangle ``[origin, origin + size]`` of some image."""

    origin: Point
    size: Size

    @classmethod
    def from_xywh(cls, x: int, y: int, w: int, h: int) -> "CropWindow":
        return cls(Point(x, y), Size(w, h))

    @property
    def x2(self) -> int:
        return self.origin.x + self.size.w

    @property
    def y2(self) -> int:
        return self.origin.y + self.size.h

    def as_bbox(self) -> BBox:
        return BBox(self.origin.x, self.origin.y, self.x2, self.y2)

    def fits_in(self, image: Size) -> bool:
        return self.x2 <= image.w and self.y2 <= image.h

    def to_dict(self) -> dict:
        return {"x": self.origin.x, "y": self.origin.y, "w": self.size.w, "h": self.size.h}

    @classmethod
    def from_dict(cls, d: dict) -> "CropWindow":
        return cls.from_xywh(d["x"], d["y"], d["w"], d["h"])


def chebyshev_norm_dist(p: Point, b: BBox) -> float:
    """Normalized L-infinity distance from ``p`` to the center of ``b``.

    Each axis offset is divided by the box's half-extent on that axis, so the box
    boundary sits at distance 1 and points outside the box yield values above 1.

    Raises:
        DegenerateBoxError: if a half-extent is zero and the point is off-center on
            that axis. A point exactly on the center line of a flat axis contributes 0.
    """
    cx, cy = b.center
    wh, hh = b.half_extents
    terms = []
    for offset, half, axis in ((abs(p.x - cx), wh, "x"), (abs(p.y - cy), hh, "y")):
        if half == 0:
            if offset != 0:
                raise DegenerateBoxError(f"box {b.as_list()} has zero extent on {axis}")
            terms.append(0.0)
        else:
            terms.append(offset / half)
    return max(terms)


def contains(b: BBox, p: Point) -> bool:
    return b.x1 <= p.x <= b.x2 and b.y1 <= p.y <= b.y2


def bbox_contained_in_window(b: BBox, w: CropWindow) -> bool:
    return (
        w.origin.x <= b.x1
        and w.origin.y <= b.y1
        and b.x2 <= w.x2
        and b.y2 <= w.y2
    )


def translate_bbox(b: BBox, origin: Point) -> BBox:
    """Express ``b`` in the coordinate frame of a window anchored at ``origin``."""
    if b.x1 < origin.x or b.y1 < origin.y:
        raise PreconditionError(f"box {b.as_list()} starts before origin {origin.as_tuple()}")
    return BBox(b.x1 - origin.x, b.y1 - origin.y, b.x2 - origin.x, b.y2 - origin.y)


def remap_point(p: Point, origin: Point) -> Point:
    """Map a point from a window's local frame back to the owning image."""
    return Point(p.x + origin.x, p.y + origin.y)


def translate_point(p: Point, origin: Point) -> Point:
    """Inverse of :func:`remap_point`."""
    if p.x < origin.x or p.y < origin.y:
        raise PreconditionError(f"point {p.as_tuple()} lies before origin {origin.as_tuple()}")
    return Point(p.x - origin.x, p.y - origin.y)


def floor_scale(n: int, factor: float, power: int = 1) -> int:
    """``floor(n * factor**power)`` evaluated on the decimal value of ``factor``.

    Binary floats put values like ``1000 * 0.6**3`` a hair below 216; the decimal
    reading is what a configured factor means.
    """
    return int(n * Fraction(str(factor)) ** power)
