"""Axis-aligned boxes in normalized image coordinates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

PixelBox = Tuple[float, float, float, float]  # (x1, y1, x2, y2) in pixels

# Pixel coordinates this far outside the image are treated as rounding noise.
PIXEL_TOLERANCE = 1e-6


class BoxError(ValueError):
    pass


@dataclass(frozen=True)
class BBox:
    """Corner-form box with coordinates as fractions of image width/height."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for name in ("x1", "y1", "x2", "y2"):
            object.__setattr__(self, name, float(getattr(self, name)))
        # written so that NaN fails every comparison
        if not (0.0 <= self.x1 < self.x2 <= 1.0 and 0.0 <= self.y1 < self.y2 <= 1.0):
            raise BoxError(
                f"invalid box ({self.x1}, {self.y1}, {self.x2}, {self.y2}): "
                "need 0 <= x1 < x2 <= 1 and 0 <= y1 < y2 <= 1"
            )

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class ImageSize:
    width: int
    height: int

    def __post_init__(self):
        if int(self.width) != self.width or int(self.height) != self.height:
            raise BoxError(f"image size must be integral, got {self.width}x{self.height}")
        if self.width < 1 or self.height < 1:
            raise BoxError(f"image size must be positive, got {self.width}x{self.height}")


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return min(1.0, inter / union)


def to_normalized(box_px: PixelBox, size: ImageSize, tolerance: float = PIXEL_TOLERANCE) -> BBox:
    """Convert a pixel corner box to a normalized :class:`BBox`.

    Coordinates up to ``tolerance`` pixels outside the image are clamped onto
    the border; anything further out is rejected.
    """
    x1, y1, x2, y2 = (float(v) for v in box_px)
    for v, limit, name in ((x1, size.width, "x1"), (x2, size.width, "x2"),
                           (y1, size.height, "y1"), (y2, size.height, "y2")):
        if not (-tolerance <= v <= limit + tolerance):
            raise BoxError(
                f"box {tuple(box_px)} lies outside the {size.width}x{size.height} image ({name}={v})"
            )
    x1, x2 = (min(max(v, 0.0), size.width) for v in (x1, x2))
    y1, y2 = (min(max(v, 0.0), size.height) for v in (y1, y2))
    if not (x1 < x2 and y1 < y2):
        raise BoxError(f"box {tuple(box_px)} has zero or negative area")
    return BBox(x1 / size.width, y1 / size.height, x2 / size.width, y2 / size.height)


def to_pixel(box: BBox, size: ImageSize) -> PixelBox:
    return (box.x1 * size.width, box.y1 * size.height, box.x2 * size.width, box.y2 * size.height)


def xywh_to_corners(xywh) -> PixelBox:
    x, y, w, h = (float(v) for v in xywh)
    return (x, y, x + w, y + h)


def hflip(box: BBox) -> BBox:
    """Mirror a box about the vertical centre line of the image."""
    return BBox(1.0 - box.x2, box.y1, 1.0 - box.x1, box.y2)
