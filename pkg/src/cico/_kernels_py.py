"""Pure NumPy kernels, used when the compiled extension is unavailable."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def rle_encode(mask: np.ndarray) -> list[int]:
    flat = np.asarray(mask, dtype=bool).ravel(order="F")
    if flat.size == 0:
        return [0]
    # positions where the value flips, with sentinels at both ends
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return runs


def rle_decode(counts, h: int, w: int) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.int64)
    values = np.zeros(len(counts), dtype=np.uint8)
    values[1::2] = 1
    flat = np.repeat(values, counts)
    return flat.reshape((w, h)).T.copy()


def inter_union(a: np.ndarray, b: np.ndarray) -> tuple[int, int]:
    a = a.astype(bool, copy=False)
    b = b.astype(bool, copy=False)
    return int(np.count_nonzero(a & b)), int(np.count_nonzero(a | b))


def conv3d_valid(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    kt, kh, kw, _, _ = w.shape
    win = sliding_window_view(x, (kt, kh, kw), axis=(0, 1, 2))
    # win: (To, Ho, Wo, Cin, kt, kh, kw)
    return np.einsum("thwcijk,ijkco->thwo", win, w, optimize=True)


def nms_order(boxes: np.ndarray, order: np.ndarray, thresh: float) -> list[int]:
    boxes = np.asarray(boxes, dtype=np.float64)
    order = np.asarray(order, dtype=np.int64)
    x1, y1, x2, y2 = boxes.T
    areas = (x2 - x1) * (y2 - y1)
    alive = np.ones(len(order), dtype=bool)
    keep = []
    for i in range(len(order)):
        if not alive[i]:
            continue
        a = order[i]
        keep.append(int(a))
        rest = order[i + 1:]
        iw = np.minimum(x2[a], x2[rest]) - np.maximum(x1[a], x1[rest])
        ih = np.minimum(y2[a], y2[rest]) - np.maximum(y1[a], y1[rest])
        inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
        union = areas[a] + areas[rest] - inter
        with np.errstate(divide="ignore", invalid="ignore"):
            iou = np.where(union > 0, inter / union, 0.0)
        alive[i + 1:] &= ~(iou > thresh)
    return keep
