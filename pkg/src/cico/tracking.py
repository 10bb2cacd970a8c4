"""Online clip-to-clip tracking and stitching of clip masks into video tracks."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from cico.inference import ClipDetection
from cico.primitives import box_iou, mask_iou
from cico.training import embed_similarity


@dataclass
class MatchScoreConfig:
    alpha_embed: float = 1.0 / 3.0
    alpha_mask: float = 1.0 / 3.0
    alpha_box: float = 1.0 / 3.0
    tau: float = 0.3

    def __post_init__(self):
        for a in (self.alpha_embed, self.alpha_mask, self.alpha_box):
            if not (np.isfinite(a) and a >= 0):
                raise ValueError(f"match score weights must be finite and non-negative, got {a}")
        if not np.isfinite(self.tau):
            raise ValueError("tau must be finite")


@dataclass
class TrackState:
    num_ids: int = 0
    prev: list[ClipDetection] = field(default_factory=list)
    prev_ids: list[int] = field(default_factory=list)
    started: bool = False


def _frame_pairs(prev: ClipDetection, cur: ClipDetection) -> list[tuple[int, int]]:
    """Local frame index pairs compared between two clips."""
    shared = sorted(set(prev.frames) & set(cur.frames))
    if shared:
        return [(t - prev.frame_start, t - cur.frame_start) for t in shared]
    return [(prev.num_frames - 1, 0)]


def match_score(prev: ClipDetection, cur: ClipDetection, cfg: MatchScoreConfig) -> float:
    """Weighted sum of embedding similarity, mask IoU and box IoU.

    The IoUs are averaged over the frames the two clips share, or taken between
    the previous clip's last frame and the current clip's first frame when the
    clips do not overlap.
    """
    score = 0.0
    if cfg.alpha_embed:
        score += cfg.alpha_embed * embed_similarity(prev.embedding, cur.embedding)
    pairs = _frame_pairs(prev, cur)
    if cfg.alpha_mask:
        if prev.masks is None or cur.masks is None:
            raise ValueError("match_score needs assembled masks")
        score += cfg.alpha_mask * float(np.mean([mask_iou(prev.masks[i], cur.masks[j]) for i, j in pairs]))
    if cfg.alpha_box:
        score += cfg.alpha_box * float(np.mean([box_iou(prev.boxes[i], cur.boxes[j]) for i, j in pairs]))
    return score


def _processing_order(dets: list[ClipDetection]) -> list[int]:
    return sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))


def link_clips(
    state: TrackState, dets: list[ClipDetection], cfg: MatchScoreConfig, log: Optional[list] = None
) -> tuple[TrackState, list[int]]:
    """Assign track ids to one clip's detections.

    The first clip seeds ids ``1..N``. Later clips take, in descending score
    order, the id of their best-scoring not-yet-claimed previous detection if
    that score exceeds ``tau``, and a fresh id otherwise. Returns the new state
    and the ids aligned with ``dets``.
    """
    ids = [0] * len(dets)
    num_ids = state.num_ids
    taken: set[int] = set()
    for i in _processing_order(dets):
        best_j, best_s = -1, -np.inf
        scores = []
        if state.started:
            for j, prev in enumerate(state.prev):
                if j in taken:
                    continue
                s = match_score(prev, dets[i], cfg)
                scores.append((state.prev_ids[j], s))
                if s > best_s:
                    best_j, best_s = j, s
        if best_j >= 0 and best_s > cfg.tau:
            taken.add(best_j)
            ids[i] = state.prev_ids[best_j]
            decision = "matched"
        else:
            num_ids += 1
            ids[i] = num_ids
            decision = "new"
        if log is not None:
            log.append(
                {
                    "clip_index": dets[i].clip_index,
                    "detection": i,
                    "score": dets[i].score,
                    "id": ids[i],
                    "decision": decision,
                    "best_score": None if best_j < 0 else best_s,
                    "candidates": [{"id": pid, "score": s} for pid, s in scores],
                }
            )
    return TrackState(num_ids=num_ids, prev=list(dets), prev_ids=ids, started=True), ids


@dataclass
class VideoTrack:
    id: int
    category_id: int
    score: float
    masks: dict[int, np.ndarray]  # frame -> (H, W) bool
    clip_scores: list[float] = field(default_factory=list)


def merge_video(clips: list[tuple[list[ClipDetection], list[int]]]) -> list[VideoTrack]:
    """Stitch per-clip tracked detections into one track per id.

    ``clips`` holds ``(detections, ids)`` pairs in clip order. On frames shared
    by several clips the later clip's mask wins. The track category is the most
    frequent clip category (ties: highest mean score, then lowest id) and the
    track score is the mean clip score.
    """
    masks: dict[int, dict[int, np.ndarray]] = {}
    cats: dict[int, list[tuple[int, float]]] = {}
    for dets, ids in clips:
        for det, tid in zip(dets, ids):
            per_frame = masks.setdefault(tid, {})
            for k, t in enumerate(det.frames):
                per_frame[t] = det.masks[k]
            cats.setdefault(tid, []).append((det.category_id, det.score))
    tracks = []
    for tid in sorted(cats):
        entries = cats[tid]
        counts = Counter(c for c, _ in entries)

        def rank(c):
            mean = np.mean([s for cc, s in entries if cc == c])
            return (-counts[c], -mean, c)

        category = min(counts, key=rank)
        scores = [s for _, s in entries]
        tracks.append(VideoTrack(tid, category, float(np.mean(scores)), masks[tid], scores))
    return tracks


def track_video(per_clip: list[list[ClipDetection]], cfg: MatchScoreConfig, log: Optional[list] = None) -> list[VideoTrack]:
    """Link every clip of one video in order, then merge."""
    state = TrackState()
    linked = []
    for dets in per_clip:
        state, ids = link_clips(state, dets, cfg, log)
        linked.append((dets, ids))
    return merge_video(linked)
