"""Temporal-coherence statistics over annotations, and VIS AP/AR evaluation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from cico.formats import AnnotationSet, ResultEntry
from cico.netout import FormatError
from cico.primitives import st_miou, t_biou, t_miou

NUM_BINS = 20
HIGH_COHERENCE = 0.75
IOU_THRESHOLDS = tuple(np.round(np.linspace(0.5, 0.95, 10), 2))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)


# ------------------------------------------------------------------ coherence


@dataclass
class DeltaStats:
    delta: int
    biou_hist: list[int]
    miou_hist: list[int]
    pb_ge075: float
    pm_ge075: float

    @property
    def num_box_samples(self) -> int:
        return sum(self.biou_hist)

    @property
    def num_mask_samples(self) -> int:
        return sum(self.miou_hist)

    def to_json(self) -> dict:
        return {
            "delta": self.delta,
            "bin_width": 1.0 / NUM_BINS,
            "t_biou_hist": self.biou_hist,
            "t_miou_hist": self.miou_hist,
            "num_box_samples": self.num_box_samples,
            "num_mask_samples": self.num_mask_samples,
            "PB_ge075": self.pb_ge075,
            "PM_ge075": self.pm_ge075,
        }


@dataclass
class CoherenceReport:
    deltas: list[DeltaStats]

    def to_json(self) -> dict:
        return {"deltas": [d.to_json() for d in self.deltas]}


def _histogram(values: list[float]) -> list[int]:
    hist = [0] * NUM_BINS
    for v in values:
        hist[min(int(v * NUM_BINS), NUM_BINS - 1)] += 1
    return hist


def _proportion(values: list[float]) -> float:
    if not values:
        return 0.0
    return sum(v >= HIGH_COHERENCE for v in values) / len(values)


def coherence_stats(gt: AnnotationSet, delta_max: int) -> CoherenceReport:
    """Histogram T-BIoU / T-MIoU of every (instance, frame) sample for ``delta = 1..delta_max``.

    A sample at frame ``t`` averages the IoUs against ``t - delta`` and
    ``t + delta`` when the instance is visible on both, uses the one side it is
    visible on otherwise, and is skipped when it is visible on neither.
    """
    if not gt.annotations:
        raise ValueError("coherence statistics need at least one annotation")
    if delta_max < 1:
        raise ValueError("delta_max must be at least 1")
    tracks = [(a.box_track(), a.mask_track()) for a in gt.annotations]
    report = []
    for delta in range(1, delta_max + 1):
        bious, mious = [], []
        for boxes, masks in tracks:
            for t in boxes:
                v = t_biou(boxes, t, delta)
                if v is not None:
                    bious.append(v)
            for t in masks:
                v = t_miou(masks, t, delta)
                if v is not None:
                    mious.append(v)
        report.append(DeltaStats(delta, _histogram(bious), _histogram(mious), _proportion(bious), _proportion(mious)))
    return CoherenceReport(report)


# ------------------------------------------------------------------ evaluation


@dataclass
class EvalReport:
    AP: float
    AP50: float
    AP75: float
    AR1: float
    AR10: float
    per_category: dict[int, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "AP": self.AP,
            "AP50": self.AP50,
            "AP75": self.AP75,
            "AR@1": self.AR1,
            "AR@10": self.AR10,
            "per_category_AP": {str(k): v for k, v in sorted(self.per_category.items())},
        }


def interpolated_ap(tp: np.ndarray, npos: int) -> float:
    """101-point interpolated AP of a score-ordered true-positive flag sequence."""
    if npos == 0:
        return 0.0
    tp = np.asarray(tp, dtype=np.float64)
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    recall = ctp / npos
    precision = ctp / (ctp + cfp)
    # precision envelope: best precision at any recall at least this high
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    values = np.where(idx < len(precision), precision[np.minimum(idx, len(precision) - 1)], 0.0)
    return float(values.mean())


def _greedy_match(ious: np.ndarray, gt_ids: list[int], thr: float) -> np.ndarray:
    """TP flags for score-ordered predictions (rows) against GT tracks (columns)."""
    n_pred, n_gt = ious.shape
    used = np.zeros(n_gt, dtype=bool)
    tp = np.zeros(n_pred, dtype=bool)
    gt_order = np.argsort(gt_ids, kind="stable")
    for i in range(n_pred):
        best, best_iou = -1, -1.0
        for g in gt_order:
            if used[g] or ious[i, g] < thr:
                continue
            if ious[i, g] > best_iou:
                best, best_iou = g, ious[i, g]
        if best >= 0:
            used[best] = True
            tp[i] = True
    return tp


def _content_key(r: ResultEntry) -> str:
    return json.dumps([None if s is None else s.counts for s in r.segmentations])


def evaluate(results: list[ResultEntry], gt: AnnotationSet, max_dets: int = 100) -> EvalReport:
    """Video-level AP/AR with spatio-temporal mask IoU.

    Predictions are ranked by score; equal scores are ordered by their
    segmentation content, so the report does not depend on file order.
    """
    videos = {v.id: v for v in gt.videos}
    cat_ids = sorted(c.id for c in gt.categories)
    for i, r in enumerate(results):
        if r.video_id not in videos:
            raise FormatError(f"results[{i}]: unknown video_id {r.video_id}")
        if r.category_id not in cat_ids:
            raise FormatError(f"results[{i}]: unknown category_id {r.category_id}")
        if len(r.segmentations) != videos[r.video_id].length:
            raise FormatError(f"results[{i}]: expected {videos[r.video_id].length} frames")

    gt_by = {}
    for a in gt.annotations:
        gt_by.setdefault((a.video_id, a.category_id), []).append((a.id, a.mask_track()))
    npos = {c: sum(len(gt_by.get((v, c), [])) for v in videos) for c in cat_ids}

    # rank predictions within each video
    ranked: dict[int, list[ResultEntry]] = {}
    for r in results:
        ranked.setdefault(r.video_id, []).append(r)
    for vid in ranked:
        ranked[vid].sort(key=lambda r: (-r.score, _content_key(r)))

    # per (video, category): prediction ranks, scores and IoU matrix
    cells = {}
    for vid, preds in ranked.items():
        decoded = [p.mask_track() for p in preds]
        for c in cat_ids:
            rows = [k for k, p in enumerate(preds) if p.category_id == c]
            gts = gt_by.get((vid, c), [])
            ious = np.zeros((len(rows), len(gts)))
            for a, k in enumerate(rows):
                for b, (_, gmasks) in enumerate(gts):
                    ious[a, b] = st_miou(decoded[k], gmasks)
            cells[(vid, c)] = (rows, [preds[k].score for k in rows], [g[0] for g in gts], ious)

    def matches(limit: int, thr: float, c: int):
        """(sort key, tp) for every prediction of category c within the top `limit` per video."""
        out = []
        for vid in sorted(ranked):
            rows, scores, gt_ids, ious = cells[(vid, c)]
            keep = [a for a, k in enumerate(rows) if k < limit]
            tp = _greedy_match(ious[keep], gt_ids, thr) if keep else np.zeros(0, dtype=bool)
            out.extend(((-scores[a], vid, rows[a]), bool(t)) for a, t in zip(keep, tp))
        out.sort(key=lambda x: x[0])
        return np.array([t for _, t in out], dtype=bool)

    valid = [c for c in cat_ids if npos[c] > 0]
    if not valid:
        return EvalReport(0.0, 0.0, 0.0, 0.0, 0.0, {})
    ap = np.zeros((len(valid), len(IOU_THRESHOLDS)))
    ar = {1: np.zeros_like(ap), 10: np.zeros_like(ap)}
    for ci, c in enumerate(valid):
        for ti, thr in enumerate(IOU_THRESHOLDS):
            ap[ci, ti] = interpolated_ap(matches(max_dets, thr, c), npos[c])
            for n in ar:
                ar[n][ci, ti] = matches(n, thr, c).sum() / npos[c]
    ap50 = float(ap[:, IOU_THRESHOLDS.index(0.5)].mean())
    ap75 = float(ap[:, IOU_THRESHOLDS.index(0.75)].mean())
    per_cat = {c: float(ap[ci].mean()) for ci, c in enumerate(valid)}
    return EvalReport(float(ap.mean()), ap50, ap75, float(ar[1].mean()), float(ar[10].mean()), per_cat)
