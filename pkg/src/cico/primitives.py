"""Boxes, masks, the IoU family, cropping and the RLE codec.

Boxes are ``(x1, y1, x2, y2)`` in continuous pixel coordinates with area
``(x2 - x1) * (y2 - y1)`` (no +1 convention). Masks are NumPy arrays of shape
``(H, W)``; a clip of masks is ``(T, H, W)``. A box track is a plain
``dict`` mapping frame index to box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Optional, Sequence

import numpy as np

from cico import kernels


class Box(NamedTuple):
    x1: float
    y1: float
    x2: float
    y2: float

    @classmethod
    def of(cls, values: Sequence[float]) -> "Box":
        """Build a validated box from any 4-sequence."""
        if len(values) != 4:
            raise ValueError(f"box needs 4 values, got {len(values)}")
        box = cls(*(float(v) for v in values))
        if not all(math.isfinite(v) for v in box):
            raise ValueError(f"box has non-finite coordinates: {box}")
        if box.x1 > box.x2 or box.y1 > box.y2:
            raise ValueError(f"box corners out of order: {box}")
        return box

    @classmethod
    def from_xywh(cls, values: Sequence[float]) -> "Box":
        x, y, w, h = values
        return cls.of((x, y, x + w, y + h))

    def to_xywh(self) -> list[float]:
        return [self.x1, self.y1, self.x2 - self.x1, self.y2 - self.y1]

    @property
    def area(self) -> float:
        return max(0.0, self.x2 - self.x1) * max(0.0, self.y2 - self.y1)

    @property
    def center(self) -> tuple[float, float]:
        return (self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0

    def scaled(self, factor: float) -> "Box":
        return Box(self.x1 * factor, self.y1 * factor, self.x2 * factor, self.y2 * factor)


BoxTrack = Mapping[int, Box]


@dataclass(frozen=True)
class Rle:
    """COCO uncompressed RLE: column-major runs, zeros first."""

    height: int
    width: int
    counts: tuple[int, ...]

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ValueError(f"RLE dims must be positive, got {self.height}x{self.width}")
        if any(c < 0 for c in self.counts):
            raise ValueError("RLE counts must be non-negative")
        total = sum(self.counts)
        if total != self.height * self.width:
            raise ValueError(
                f"RLE counts sum to {total}, expected {self.height}*{self.width}={self.height * self.width}"
            )

    def to_json(self) -> dict:
        return {"size": [self.height, self.width], "counts": list(self.counts)}

    @classmethod
    def from_json(cls, obj: dict) -> "Rle":
        if not isinstance(obj, dict) or set(obj) != {"size", "counts"}:
            raise ValueError("RLE object must have exactly the keys 'size' and 'counts'")
        size, counts = obj["size"], obj["counts"]
        if not (isinstance(size, list) and len(size) == 2 and all(isinstance(v, int) for v in size)):
            raise ValueError(f"RLE size must be [height, width], got {size!r}")
        if not (isinstance(counts, list) and all(isinstance(c, int) and not isinstance(c, bool) for c in counts)):
            raise ValueError("RLE counts must be a list of integers")
        return cls(size[0], size[1], tuple(counts))


def box_iou(a: Sequence[float], b: Sequence[float]) -> float:
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    inter = iw * ih if iw > 0 and ih > 0 else 0.0
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    if union <= 0:
        return 0.0
    return float(inter / union)


def box_iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between ``(N, 4)`` and ``(M, 4)`` box arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(union > 0, inter / union, 0.0)


def circumscribed_box(track: BoxTrack | Sequence[Sequence[float]]) -> Box:
    """Smallest box containing every box of the track."""
    boxes = list(track.values()) if isinstance(track, Mapping) else list(track)
    if not boxes:
        raise ValueError("circumscribed box of an empty track")
    arr = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    return Box(float(arr[:, 0].min()), float(arr[:, 1].min()), float(arr[:, 2].max()), float(arr[:, 3].max()))


def _temporal_iou(items: Mapping, t: int, delta: int, iou) -> Optional[float]:
    if t not in items:
        raise ValueError(f"instance is absent at frame {t}")
    values = [iou(items[t], items[s]) for s in (t - delta, t + delta) if s in items]
    if not values:
        return None
    return sum(values) / len(values)


def t_biou(track: BoxTrack, t: int, delta: int) -> Optional[float]:
    """Temporal box IoU of one instance between frame ``t`` and ``t ± delta``.

    Averages the two IoUs when the instance is present on both sides, uses the
    single one when present on one side, and returns ``None`` when present on
    neither.
    """
    return _temporal_iou(track, t, delta, box_iou)


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"mask dimension mismatch: {a.shape} vs {b.shape}")


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    _check_same_shape(a, b)
    inter, union = kernels.inter_union(a, b)
    if union == 0:
        return 1.0
    return inter / union


def t_miou(masks: Mapping[int, np.ndarray], t: int, delta: int) -> Optional[float]:
    return _temporal_iou(masks, t, delta, mask_iou)


def st_miou(pred: Mapping[int, Optional[np.ndarray]], gt: Mapping[int, Optional[np.ndarray]]) -> float:
    """Spatio-temporal mask IoU: per-frame intersections and unions summed over the video.

    Frames missing on one side (absent key or ``None``) count as empty masks.
    """
    inter_sum = 0
    union_sum = 0
    for t in set(pred) | set(gt):
        p = pred.get(t)
        g = gt.get(t)
        if p is None and g is None:
            continue
        if p is None:
            union_sum += int(np.count_nonzero(g))
            continue
        if g is None:
            union_sum += int(np.count_nonzero(p))
            continue
        p = np.asarray(p)
        g = np.asarray(g)
        _check_same_shape(p, g)
        inter, union = kernels.inter_union(p, g)
        inter_sum += inter
        union_sum += union
    if union_sum == 0:
        return 1.0
    return inter_sum / union_sum


def crop_bounds(box: Sequence[float], height: int, width: int) -> tuple[int, int, int, int]:
    """Integer ``(y0, y1, x0, x1)`` slice bounds of a box rounded outward and clipped.

    A zero-area box yields an empty slice.
    """
    x1, y1, x2, y2 = box
    if not (x2 > x1 and y2 > y1):
        return 0, 0, 0, 0
    xa = min(max(math.floor(x1), 0), width)
    xb = min(max(math.ceil(x2), 0), width)
    ya = min(max(math.floor(y1), 0), height)
    yb = min(max(math.ceil(y2), 0), height)
    return ya, yb, xa, xb


def crop(mask: np.ndarray, box: Sequence[float]) -> np.ndarray:
    """Zero everything outside ``box``. Works on ``(H, W)`` or ``(T, H, W)``."""
    mask = np.asarray(mask)
    h, w = mask.shape[-2:]
    ya, yb, xa, xb = crop_bounds(box, h, w)
    out = np.zeros_like(mask)
    out[..., ya:yb, xa:xb] = mask[..., ya:yb, xa:xb]
    return out


def rle_encode(mask: np.ndarray) -> Rle:
    mask = np.asarray(mask)
    if mask.ndim != 2 or mask.size == 0:
        raise ValueError(f"expected a non-empty 2-D mask, got shape {mask.shape}")
    h, w = mask.shape
    return Rle(h, w, tuple(int(c) for c in kernels.rle_encode(mask)))


def rle_decode(rle: Rle) -> np.ndarray:
    if sum(rle.counts) != rle.height * rle.width:
        raise ValueError("RLE counts do not sum to height*width")
    return kernels.rle_decode(rle.counts, rle.height, rle.width).astype(bool)


def mask_to_box(mask: np.ndarray) -> Optional[Box]:
    """Tight pixel box of a binary mask, or ``None`` if the mask is empty."""
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        return None
    return Box(float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1))
