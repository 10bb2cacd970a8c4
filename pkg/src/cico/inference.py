"""Per-clip inference: partitioning, confidence filter, NMS and mask assembly."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from cico import assembly, kernels
from cico.heads import decode_boxes
from cico.netout import ClipNetOut, FormatError
from cico.primitives import Box, circumscribed_box


@dataclass(frozen=True)
class ClipWindow:
    index: int
    start: int
    end: int  # inclusive

    @property
    def length(self) -> int:
        return self.end - self.start + 1


@dataclass
class InferenceConfig:
    conf_thresh: float = 0.1
    nms_thresh: float = 0.5
    top_k: int = 100
    head: str = "yolact"

    def __post_init__(self):
        if not (0.0 <= self.conf_thresh <= 1.0 and 0.0 <= self.nms_thresh <= 1.0):
            raise ValueError("conf_thresh and nms_thresh must lie in [0, 1]")
        if self.top_k < 1:
            raise ValueError("top_k must be at least 1")
        if self.head not in assembly.HEADS:
            raise ValueError(f"unknown head variant {self.head!r}")


@dataclass
class ClipDetection:
    category_id: int
    score: float
    embedding: np.ndarray
    boxes: np.ndarray  # (T, 4)
    cbox: Box
    anchor_index: int = 0
    clip_index: int = 0
    frame_start: int = 0
    masks: Optional[np.ndarray] = None  # (T, H, W) bool

    @property
    def num_frames(self) -> int:
        return len(self.boxes)

    @property
    def frames(self) -> range:
        return range(self.frame_start, self.frame_start + self.num_frames)


def partition_clips(length: int, T: int, overlap: int = 0) -> list[ClipWindow]:
    """Split ``length`` frames into windows of ``T`` frames overlapping by ``overlap``.

    Windows step by ``T - overlap``; if frames remain past the last full window, a
    final window is aligned to the end of the video. Videos shorter than ``T``
    get one window covering everything.
    """
    if length < 1:
        raise ValueError("video length must be at least 1")
    if T < 1 or not 0 <= overlap < T:
        raise ValueError(f"need T >= 1 and 0 <= overlap < T, got T={T}, overlap={overlap}")
    if length <= T:
        return [ClipWindow(0, 0, length - 1)]
    stride = T - overlap
    starts = list(range(0, length - T + 1, stride))
    if starts[-1] + T < length:
        starts.append(length - T)
    return [ClipWindow(i, s, s + T - 1) for i, s in enumerate(starts)]


def filter_confidence(scores: np.ndarray, threshold: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Keep records whose best foreground probability is ``>= threshold``.

    ``scores`` is ``(N, c+1)`` with background in column 0. Returns
    ``(record indices, class columns, scores)``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, np.zeros(0)
    fg = scores[:, 1:]
    cls = fg.argmax(axis=1) + 1
    best = fg.max(axis=1)
    keep = np.flatnonzero(best >= threshold)
    return keep, cls[keep], best[keep]


def _rank_key(det: ClipDetection):
    return (-det.score, det.anchor_index)


def nms_clip(dets: list[ClipDetection], iou_threshold: float) -> list[ClipDetection]:
    """Class-wise greedy NMS on circumscribed boxes; output sorted by score."""
    kept = []
    by_class: dict[int, list[ClipDetection]] = {}
    for det in dets:
        by_class.setdefault(det.category_id, []).append(det)
    for group in by_class.values():
        group = sorted(group, key=_rank_key)
        boxes = np.array([d.cbox for d in group], dtype=np.float64).reshape(-1, 4)
        order = np.arange(len(group))
        kept.extend(group[i] for i in kernels.nms_order(boxes, order, iou_threshold))
    return sorted(kept, key=_rank_key)


def run_clip(clip: ClipNetOut, cfg: InferenceConfig) -> list[ClipDetection]:
    """Detections for one clip: filter, NMS on circumscribed boxes, top-k, then masks."""
    T = clip.num_frames
    if clip.prototypes.shape[0] != T:
        raise FormatError(f"clip {clip.clip_index}: prototypes have {clip.prototypes.shape[0]} frames, window has {T}")
    head = clip.head_variant or cfg.head
    idx, cls, sc = filter_confidence(clip.scores, cfg.conf_thresh)
    if len(idx) == 0:
        return []
    if clip.boxes is not None:
        boxes = clip.boxes[idx]
    else:
        anchors = clip.anchors()
        boxes = np.stack([decode_boxes(anchors[i], clip.box_regression[i]) for i in idx])
    dets = []
    for j, i in enumerate(idx):
        b = np.asarray(boxes[j], dtype=np.float64).reshape(T, 4)
        dets.append(
            ClipDetection(
                category_id=int(cls[j]),
                score=float(sc[j]),
                embedding=clip.embeddings[i],
                boxes=b,
                cbox=circumscribed_box(b),
                anchor_index=int(i),
                clip_index=clip.clip_index,
                frame_start=clip.frame_start,
            )
        )
    # masks are assembled only for detections that survive NMS and top-k
    dets = nms_clip(dets, cfg.nms_thresh)[: cfg.top_k]
    for det in dets:
        soft = assembly.assemble(head, clip.prototypes, clip.mask_params[det.anchor_index], det.cbox)
        det.masks = assembly.finalize_mask(soft, clip.image_height, clip.image_width)
    return dets
