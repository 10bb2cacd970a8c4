"""Sample matching and forward loss evaluation.

Nothing here computes gradients; these evaluators check the numbers an
external training loop should produce.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from cico import assembly
from cico.primitives import Box, box_iou_matrix, circumscribed_box, crop, crop_bounds

PROB_EPS = 1e-7

NEGATIVE = -1
IGNORED = -2


@dataclass
class MatcherConfig:
    eps_p: float = 0.5
    eps_n: float = 0.4
    use_circumscribed: bool = True

    def __post_init__(self):
        if not 0.0 <= self.eps_n <= self.eps_p <= 1.0:
            raise ValueError(f"need 0 <= eps_n <= eps_p <= 1, got eps_n={self.eps_n}, eps_p={self.eps_p}")


@dataclass
class MatchResult:
    """``assignment[i]`` is a ground-truth index (positive), ``NEGATIVE`` or ``IGNORED``."""

    assignment: np.ndarray
    max_iou: np.ndarray

    @property
    def positives(self) -> np.ndarray:
        return np.flatnonzero(self.assignment >= 0)

    @property
    def negatives(self) -> np.ndarray:
        return np.flatnonzero(self.assignment == NEGATIVE)

    @property
    def ignored(self) -> np.ndarray:
        return np.flatnonzero(self.assignment == IGNORED)

    @property
    def num_pos(self) -> int:
        return len(self.positives)

    @property
    def num_neg(self) -> int:
        return len(self.negatives)

    @property
    def num_samples(self) -> int:
        return self.num_pos + self.num_neg


@dataclass
class LossWeights:
    cls: float = 1.0
    reg: float = 1.0
    mask: float = 1.0
    track: float = 1.0

    def __post_init__(self):
        for v in (self.cls, self.reg, self.mask, self.track):
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"loss weights must be finite and non-negative, got {v}")


@dataclass
class GtInstance:
    id: int
    category: int
    boxes: dict[int, Box]  # frame -> box, present frames only
    masks: dict[int, np.ndarray]  # frame -> (H, W) bool, same frames as boxes

    def __post_init__(self):
        if set(self.boxes) != set(self.masks):
            raise ValueError(f"instance {self.id}: boxes and masks cover different frames")

    @property
    def cbox(self) -> Box:
        return circumscribed_box(self.boxes)


@dataclass
class GroundTruthClip:
    frames: list[int]
    height: int
    width: int
    instances: list[GtInstance] = field(default_factory=list)

    def mask_clip(self, inst: GtInstance) -> np.ndarray:
        out = np.zeros((len(self.frames), self.height, self.width), dtype=bool)
        for i, t in enumerate(self.frames):
            if t in inst.masks:
                out[i] = inst.masks[t]
        return out


def matcher_box(inst: GtInstance, t: int, use_circumscribed: bool = True) -> Box:
    """Box used to match anchors for ``inst`` at frame ``t``.

    With ``use_circumscribed`` this is the envelope of the instance's boxes on
    frames ``t-1``, ``t`` and ``t+1`` where it is present.
    """
    if t not in inst.boxes:
        raise ValueError(f"instance {inst.id} is absent at frame {t}")
    if not use_circumscribed:
        return inst.boxes[t]
    return circumscribed_box({s: inst.boxes[s] for s in (t - 1, t, t + 1) if s in inst.boxes})


def match_samples(anchors: np.ndarray, gt_boxes: np.ndarray, cfg: MatcherConfig) -> MatchResult:
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    if len(anchors) == 0:
        raise ValueError("match_samples needs at least one anchor")
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    if len(gt_boxes) == 0:
        return MatchResult(np.full(len(anchors), NEGATIVE, dtype=np.int64), np.zeros(len(anchors)))
    iou = box_iou_matrix(anchors, gt_boxes)
    best = iou.argmax(axis=1)  # ties -> lowest gt index
    best_iou = iou[np.arange(len(anchors)), best]
    assignment = np.full(len(anchors), IGNORED, dtype=np.int64)
    assignment[best_iou > cfg.eps_p] = best[best_iou > cfg.eps_p]
    assignment[best_iou < cfg.eps_n] = NEGATIVE
    return MatchResult(assignment, best_iou)


def match_clip(anchors: np.ndarray, gt: GroundTruthClip, t: int, cfg: MatcherConfig) -> tuple[MatchResult, list[GtInstance]]:
    """Match anchors against the instances present at frame ``t`` of a clip.

    Returns the match result and the instance list its positive indices refer to.
    """
    present = [inst for inst in gt.instances if t in inst.boxes]
    boxes = np.array([matcher_box(inst, t, cfg.use_circumscribed) for inst in present]).reshape(-1, 4)
    return match_samples(anchors, boxes, cfg), present


def _require_samples(n: int, what: str) -> None:
    if n < 1:
        raise ValueError(f"{what} needs at least one sample")


def loss_cls(probs: np.ndarray, targets: Sequence[int], normalizer: Optional[float] = None) -> float:
    """Mean cross-entropy of probability rows ``probs`` against integer ``targets``."""
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    _require_samples(len(targets), "loss_cls")
    p = np.clip(probs[np.arange(len(targets)), targets], PROB_EPS, 1.0)
    n = len(targets) if normalizer is None else normalizer
    return float(-np.log(p).sum() / n)


def smooth_l1(x: np.ndarray, beta: float = 1.0) -> np.ndarray:
    ax = np.abs(np.asarray(x, dtype=np.float64))
    return np.where(ax < beta, 0.5 * ax * ax / beta, ax - 0.5 * beta)


def loss_reg(pred: np.ndarray, target: np.ndarray, normalizer: Optional[float] = None) -> float:
    """Smooth-L1 summed over coordinates, averaged over samples (positives)."""
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if pred.shape != target.shape:
        raise ValueError(f"regression shape mismatch: {pred.shape} vs {target.shape}")
    _require_samples(len(pred), "loss_reg")
    n = len(pred) if normalizer is None else normalizer
    return float(smooth_l1(pred - target).sum() / n)


def downsample_max(masks: np.ndarray, factor: int = assembly.PROTO_STRIDE) -> np.ndarray:
    """Max-pool ``(..., H, W)`` binary masks by ``factor``; partial edge blocks are kept."""
    masks = np.asarray(masks, dtype=bool)
    h, w = masks.shape[-2:]
    hp, wp = -(-h // factor), -(-w // factor)
    padded = np.zeros(masks.shape[:-2] + (hp * factor, wp * factor), dtype=bool)
    padded[..., :h, :w] = masks
    blocks = padded.reshape(masks.shape[:-2] + (hp, factor, wp, factor))
    return blocks.any(axis=(-1, -3))


def bce(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    p = np.clip(np.asarray(pred, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    t = np.asarray(target, dtype=np.float64)
    return -(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))


def mask_bce(pred_clip: np.ndarray, gt_clip: np.ndarray, cbox: Sequence[float]) -> float:
    """BCE of a ``(T, Hp, Wp)`` prediction vs a prototype-resolution target, averaged in-box."""
    hp, wp = pred_clip.shape[-2:]
    ya, yb, xa, xb = crop_bounds(Box.of(cbox).scaled(1.0 / assembly.PROTO_STRIDE), hp, wp)
    if yb <= ya or xb <= xa:
        raise ValueError(f"box {tuple(cbox)} covers no prototype cell")
    loss = bce(pred_clip[..., ya:yb, xa:xb], gt_clip[..., ya:yb, xa:xb])
    return float(loss.mean())


def loss_mask(
    protos: np.ndarray,
    thetas: Sequence[np.ndarray],
    gt_masks: Sequence[np.ndarray],
    gt_cboxes: Sequence[Sequence[float]],
    head: str = "yolact",
) -> float:
    """Clip-level mask loss averaged over positives.

    ``gt_masks[i]`` is the ``(T, H, W)`` image-resolution target of positive
    ``i``, ``gt_cboxes[i]`` its circumscribed box. Both heads are cropped by
    the box here.
    """
    _require_samples(len(thetas), "loss_mask")
    if not (len(thetas) == len(gt_masks) == len(gt_cboxes)):
        raise ValueError("thetas, gt_masks and gt_cboxes must have one entry per positive")
    protos = np.asarray(protos, dtype=np.float64)
    hp, wp = protos.shape[1:3]
    total = 0.0
    for theta, masks, cbox in zip(thetas, gt_masks, gt_cboxes):
        pred = assembly.assemble(head, protos, theta, cbox)
        if head != "yolact":
            pred = crop(pred, Box.of(cbox).scaled(1.0 / assembly.PROTO_STRIDE))
        target = downsample_max(masks)[..., :hp, :wp]
        total += mask_bce(pred, target, cbox)
    return total / len(thetas)


def embed_similarity(e1: np.ndarray, e2: np.ndarray) -> float:
    """``0.5 * (cos(e1, e2) + 1)``, in [0, 1]."""
    e1 = np.asarray(e1, dtype=np.float64)
    e2 = np.asarray(e2, dtype=np.float64)
    n1, n2 = np.linalg.norm(e1), np.linalg.norm(e2)
    if n1 == 0 or n2 == 0:
        raise ValueError("embedding similarity is undefined for a zero vector")
    cos = float(np.dot(e1, e2) / (n1 * n2))
    return 0.5 * (min(1.0, max(-1.0, cos)) + 1.0)


def similarity_matrix(embeddings: np.ndarray) -> np.ndarray:
    e = np.asarray(embeddings, dtype=np.float64)
    norms = np.linalg.norm(e, axis=1)
    if np.any(norms == 0):
        raise ValueError("embedding similarity is undefined for a zero vector")
    u = e / norms[:, None]
    return 0.5 * (np.clip(u @ u.T, -1.0, 1.0) + 1.0)


def loss_track(embeddings: np.ndarray, ids: Sequence[int]) -> float:
    """Pairwise embedding loss over all ordered pairs of positives, self-pairs included."""
    ids = np.asarray(ids)
    _require_samples(len(ids), "loss_track")
    d = similarity_matrix(embeddings)
    same = ids[:, None] == ids[None, :]
    # floor each log argument: keeps log finite while d = 1 on a same-id pair still costs exactly 0
    arg = np.where(same, d, 1.0 - d)
    terms = np.log(np.maximum(arg, PROB_EPS))
    return float(-terms.sum() / len(ids) ** 2)


def loss_total(cls: float, reg: float, mask: float, track: float, weights: LossWeights = LossWeights()) -> float:
    return weights.cls * cls + weights.reg * reg + weights.mask * mask + weights.track * track
