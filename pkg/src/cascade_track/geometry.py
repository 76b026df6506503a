"""Bounding-box geometry and tracking-quality metrics."""

from dataclasses import dataclass

import numpy as np

# success curve sampled at 21 evenly spaced overlap thresholds (OTB convention)
SUCCESS_THRESHOLDS = np.linspace(0.0, 1.0, 21)


@dataclass(frozen=True)
class BBox:
    """Axis-aligned rectangle, continuous pixel coordinates, (x, y) = top-left."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box sides must be positive, got w={self.w}, h={self.h}")

    @property
    def cx(self) -> float:
        return self.x + 0.5 * self.w

    @property
    def cy(self) -> float:
        return self.y + 0.5 * self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.w, self.h], dtype=float)


def iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two boxes; disjoint boxes give 0."""
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def iou_many(ref: BBox, boxes: np.ndarray) -> np.ndarray:
    """IoU of one reference box against an (n, 4) array of x,y,w,h boxes."""
    boxes = np.asarray(boxes, dtype=float)
    ix = np.minimum(ref.x + ref.w, boxes[:, 0] + boxes[:, 2]) - np.maximum(ref.x, boxes[:, 0])
    iy = np.minimum(ref.y + ref.h, boxes[:, 1] + boxes[:, 3]) - np.maximum(ref.y, boxes[:, 1])
    inter = np.clip(ix, 0.0, None) * np.clip(iy, 0.0, None)
    union = ref.area + boxes[:, 2] * boxes[:, 3] - inter
    return inter / union


def center_error(a: BBox, b: BBox) -> float:
    """Euclidean distance between box centers in pixels."""
    return float(np.hypot(a.cx - b.cx, a.cy - b.cy))


def success_auc(overlaps) -> float:
    """Mean fraction of frames whose overlap strictly exceeds each of the
    21 thresholds 0.00, 0.05, ..., 1.00."""
    overlaps = np.asarray(overlaps, dtype=float)
    if overlaps.size == 0:
        raise ValueError("empty overlap series")
    if np.any(overlaps < 0) or np.any(overlaps > 1):
        raise ValueError("overlaps must lie in [0, 1]")
    wins = overlaps[:, None] > SUCCESS_THRESHOLDS[None, :]
    return float(wins.mean())


def precision_at(errors, threshold: float = 20.0) -> float:
    """Fraction of frames with center error <= threshold pixels."""
    errors = np.asarray(errors, dtype=float)
    if errors.size == 0:
        raise ValueError("empty error series")
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    return float(np.mean(errors <= threshold))
