"""Video-level drivers that connect the file formats to inference, tracking and losses."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Optional

import numpy as np

from cico.formats import AnnotationSet, EngineConfig, ResultEntry, tracks_to_results
from cico.heads import encode_boxes
from cico.inference import ClipDetection, InferenceConfig, run_clip
from cico.netout import ClipNetOut, FormatError, NetOutContainer
from cico.primitives import circumscribed_box
from cico.tracking import track_video
from cico.training import (
    GroundTruthClip,
    GtInstance,
    loss_cls,
    loss_mask,
    loss_reg,
    loss_total,
    loss_track,
    match_clip,
)


def _run_one(args) -> list[ClipDetection]:
    clip, cfg = args
    return run_clip(clip, cfg)


def run_clips(clips: list[ClipNetOut], cfg: InferenceConfig, workers: int = 1) -> list[list[ClipDetection]]:
    """``run_clip`` over many clips; output order matches input order for any worker count."""
    jobs = [(c, cfg) for c in clips]
    if workers <= 1 or len(jobs) <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))


def infer_container(
    container: NetOutContainer, cfg: EngineConfig, workers: int = 1, log: Optional[list] = None
) -> list[ResultEntry]:
    """Per-clip inference, clip linking and merging for every video in the container."""
    infer_cfg = cfg.inference()
    match_cfg = cfg.match_score()
    videos = container.videos()
    ordered = [clip for vid in sorted(videos) for clip in videos[vid]]
    outputs = run_clips(ordered, infer_cfg, workers)
    results: list[ResultEntry] = []
    pos = 0
    for vid in sorted(videos):
        clips = videos[vid]
        per_clip = outputs[pos:pos + len(clips)]
        pos += len(clips)
        lengths = {c.video_length for c in clips}
        if len(lengths) != 1:
            raise FormatError(f"video {vid}: clips disagree on video_length")
        tracks = track_video(per_clip, match_cfg, log)
        results.extend(tracks_to_results(vid, lengths.pop(), tracks))
    return results


# ------------------------------------------------------------------ losses


def gt_clip_for(clip: ClipNetOut, ann: AnnotationSet) -> GroundTruthClip:
    video = ann.video(clip.video_id)
    if (video.height, video.width) != (clip.image_height, clip.image_width):
        raise FormatError(f"clip {clip.clip_index}: image size differs from video {video.id}")
    frames = list(clip.frames)
    instances = []
    for a in ann.by_video()[video.id]:
        boxes = {t: b for t, b in a.box_track().items() if t in clip.frames}
        if not boxes:
            continue
        masks = {t: m for t, m in a.mask_track().items() if t in clip.frames}
        instances.append(GtInstance(a.id, a.category_id, boxes, masks))
    return GroundTruthClip(frames, video.height, video.width, instances)


def clip_losses(clip: ClipNetOut, ann: AnnotationSet, cfg: EngineConfig) -> dict:
    """Loss components for one clip.

    Samples are the container's records. With anchor-encoded boxes the anchors
    are the proposals; with decoded boxes each record's own circumscribed box
    serves as its proposal. Components without samples are ``None``.
    """
    gt = gt_clip_for(clip, ann)
    T = clip.num_frames
    if clip.box_regression is not None:
        proposals = clip.anchors()
        pred_reg = clip.box_regression
    else:
        proposals = np.array([circumscribed_box(b) for b in clip.boxes]).reshape(-1, 4)
        pred_reg = np.stack([encode_boxes(p, b) for p, b in zip(proposals, clip.boxes)]) if len(proposals) else np.zeros((0, 4 * T))
    center = clip.frame_start + T // 2
    result, present = match_clip(proposals, gt, center, cfg.matcher())
    pos = result.positives
    samples = np.concatenate([pos, result.negatives])
    out = {"num_pos": int(len(pos)), "num_neg": int(result.num_neg), "cls": None, "reg": None, "mask": None, "track": None}
    if len(samples):
        targets = np.zeros(len(samples), dtype=np.int64)
        targets[: len(pos)] = [present[result.assignment[i]].category for i in pos]
        if targets.max() >= clip.scores.shape[1]:
            raise FormatError(f"clip {clip.clip_index}: category id exceeds score columns")
        out["cls"] = loss_cls(clip.scores[samples], targets)
    if len(pos):
        insts = [present[result.assignment[i]] for i in pos]
        reg_targets = []
        for i, inst in zip(pos, insts):
            cbox = inst.cbox
            frame_boxes = [inst.boxes.get(t, cbox) for t in clip.frames]
            reg_targets.append(encode_boxes(proposals[i], frame_boxes))
        out["reg"] = loss_reg(pred_reg[pos], np.array(reg_targets))
        out["mask"] = loss_mask(
            clip.prototypes,
            [clip.mask_params[i] for i in pos],
            [gt.mask_clip(inst) for inst in insts],
            [inst.cbox for inst in insts],
            head=clip.head_variant,
        )
        out["track"] = loss_track(clip.embeddings[pos], [inst.id for inst in insts])
    return out


def container_losses(container: NetOutContainer, ann: AnnotationSet, cfg: EngineConfig) -> dict:
    """Mean of each loss component over the clips where it is defined, plus the weighted total."""
    per_clip = [clip_losses(c, ann, cfg) for c in container.clips]
    report = {}
    for name in ("cls", "reg", "mask", "track"):
        vals = [p[name] for p in per_clip if p[name] is not None]
        report[name] = float(np.mean(vals)) if vals else 0.0
    report["total"] = loss_total(report["cls"], report["reg"], report["mask"], report["track"], cfg.loss_weights())
    report["clips"] = len(per_clip)
    report["num_pos"] = sum(p["num_pos"] for p in per_clip)
    return report
