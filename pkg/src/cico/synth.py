"""Synthetic moving-shape videos with exact ground truth and oracle network outputs.

Shapes are rasterized on the prototype grid (one cell = 4x4 image pixels) and
rendered at image resolution with the engine's own upsampling rule, so the
oracle prototypes carry exactly the information needed to rebuild each mask. Every instance in a video gets its own category, and scenes where a
shape is more than half hidden by shapes drawn after it are redrawn.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from cico.assembly import PROTO_STRIDE, finalize_mask
from cico.formats import Annotation, AnnotationSet, Category, EngineConfig, Video, write_annotations, write_config
from cico.inference import partition_clips
from cico.netout import ClipNetOut, write_container
from cico.primitives import mask_to_box, rle_encode

ORACLE_LOGIT = 10.0
ORACLE_SCORE = 0.99
MIN_VISIBLE = 0.5
MAX_ATTEMPTS = 200


@dataclass
class SynthParams:
    videos: int = 2
    frames: int = 12
    shapes: int = 3
    height: int = 128
    width: int = 128
    size_range: tuple[float, float] = (32.0, 56.0)  # pixels
    velocity_range: tuple[float, float] = (1.0, 4.0)  # pixels per frame
    seed: int = 0
    T: int = 3
    T_o: int = 1
    embed_dim: int = 32

    def validate(self) -> None:
        if self.videos < 1 or self.frames < 1 or self.shapes < 1:
            raise ValueError("videos, frames and shapes must all be at least 1")
        if self.height % PROTO_STRIDE or self.width % PROTO_STRIDE:
            raise ValueError(f"image size must be a multiple of {PROTO_STRIDE}")
        lo, hi = self.size_range
        if not 0 < lo <= hi or hi > min(self.height, self.width):
            raise ValueError(f"size_range {self.size_range} does not fit a {self.height}x{self.width} image")
        if not 0 <= self.velocity_range[0] <= self.velocity_range[1]:
            raise ValueError("velocity_range must be ordered and non-negative")
        if self.shapes > self.embed_dim:
            raise ValueError("embed_dim must be at least the number of shapes")
        if self.T < 1 or not 0 <= self.T_o < self.T:
            raise ValueError("need T >= 1 and 0 <= T_o < T")


@dataclass
class SynthData:
    annotations: AnnotationSet
    masks: dict[int, np.ndarray]  # annotation id -> (L, H, W) bool
    clips: list[ClipNetOut]
    config: EngineConfig


def _num_categories(shapes: int) -> int:
    return max(4, shapes)


def _category_name(cid: int) -> str:
    return f"{'rect' if cid % 2 else 'ellipse'}-{cid}"


def _rasterize(kind: str, cx: float, cy: float, w: float, h: float, gh: int, gw: int) -> np.ndarray:
    ys = np.arange(gh)[:, None] + 0.5
    xs = np.arange(gw)[None, :] + 0.5
    if kind == "rect":
        return (np.abs(xs - cx) < w / 2) & (np.abs(ys - cy) < h / 2)
    return ((xs - cx) / (w / 2)) ** 2 + ((ys - cy) / (h / 2)) ** 2 <= 1.0


def _trajectories(rng: np.random.Generator, p: SynthParams, gh: int, gw: int) -> list[dict]:
    shapes = []
    for _ in range(p.shapes):
        w, h = rng.uniform(*p.size_range, size=2) / PROTO_STRIDE
        cx = rng.uniform(w / 2, gw - w / 2)
        cy = rng.uniform(h / 2, gh - h / 2)
        speed = rng.uniform(*p.velocity_range) / PROTO_STRIDE
        angle = rng.uniform(0, 2 * np.pi)
        vx, vy = speed * np.cos(angle), speed * np.sin(angle)
        centers = []
        for _ in range(p.frames):
            centers.append((cx, cy))
            cx, cy = cx + vx, cy + vy
            # clamp inside the frame and bounce
            if not w / 2 <= cx <= gw - w / 2:
                cx = min(max(cx, w / 2), gw - w / 2)
                vx = -vx
            if not h / 2 <= cy <= gh - h / 2:
                cy = min(max(cy, h / 2), gh - h / 2)
                vy = -vy
        shapes.append({"w": w, "h": h, "centers": centers})
    return shapes


def _render_video(rng: np.random.Generator, p: SynthParams, categories: list[int]) -> np.ndarray:
    """Visible proto-grid masks ``(shapes, L, gh, gw)``; later shapes occlude earlier ones."""
    gh, gw = p.height // PROTO_STRIDE, p.width // PROTO_STRIDE
    for _ in range(MAX_ATTEMPTS):
        traj = _trajectories(rng, p, gh, gw)
        full = np.zeros((p.shapes, p.frames, gh, gw), dtype=bool)
        for j, s in enumerate(traj):
            kind = "rect" if categories[j] % 2 else "ellipse"
            for t, (cx, cy) in enumerate(s["centers"]):
                full[j, t] = _rasterize(kind, cx, cy, s["w"], s["h"], gh, gw)
        visible = full.copy()
        for j in range(p.shapes):
            if j + 1 < p.shapes:
                visible[j] &= ~full[j + 1:].any(axis=0)
        full_area = full.sum(axis=(2, 3))
        vis_area = visible.sum(axis=(2, 3))
        if np.all(full_area > 0) and np.all(vis_area >= MIN_VISIBLE * full_area):
            return visible
    raise RuntimeError("could not place shapes without heavy occlusion; use fewer or smaller shapes")


def _upscale(grid_masks: np.ndarray) -> np.ndarray:
    """Render ``(..., gh, gw)`` grid masks at image resolution.

    Uses the same bilinear upsample and 0.5 threshold as mask finalization, so
    a mask built from the grid is reproduced pixel for pixel at inference.
    """
    *lead, gh, gw = grid_masks.shape
    flat = grid_masks.reshape(-1, gh, gw).astype(np.float64)
    out = finalize_mask(flat, gh * PROTO_STRIDE, gw * PROTO_STRIDE)
    return out.reshape(*lead, gh * PROTO_STRIDE, gw * PROTO_STRIDE)


def _oracle_clips(video_id: int, grid: np.ndarray, image_masks: np.ndarray, categories: list[int], p: SynthParams) -> list[ClipNetOut]:
    n_shapes, L, gh, gw = grid.shape
    n_cat = _num_categories(p.shapes)
    clips = []
    for win in partition_clips(L, p.T, p.T_o):
        frames = range(win.start, win.end + 1)
        T = len(frames)
        protos = np.where(grid[:, win.start:win.end + 1], ORACLE_LOGIT, -ORACLE_LOGIT)
        protos = np.moveaxis(protos, 0, -1)  # (T, gh, gw, k)
        present = [j for j in range(n_shapes) if image_masks[j, win.start:win.end + 1].any()]
        n = len(present)
        scores = np.zeros((n, n_cat + 1))
        scores[:, 0] = 1.0 - ORACLE_SCORE
        embeddings = np.zeros((n, p.embed_dim))
        params = np.zeros((n, n_shapes))
        boxes = np.zeros((n, T, 4))
        for r, j in enumerate(present):
            scores[r, categories[j]] = ORACLE_SCORE
            embeddings[r, j] = 1.0
            params[r, j] = 1.0
            last = None
            for k, t in enumerate(frames):
                box = mask_to_box(image_masks[j, t])
                last = box if box is not None else last
                boxes[r, k] = box if box is not None else (last if last is not None else (0, 0, 0, 0))
        clips.append(
            ClipNetOut(
                video_id=video_id,
                clip_index=win.index,
                frame_start=win.start,
                frame_end=win.end,
                head_variant="yolact",
                image_height=p.height,
                image_width=p.width,
                video_length=L,
                prototypes=protos,
                scores=scores,
                embeddings=embeddings,
                mask_params=params,
                boxes=boxes,
            )
        )
    return clips


def synth_generate(params: SynthParams) -> SynthData:
    """Deterministically generate annotations, masks and oracle netouts from ``params.seed``."""
    params.validate()
    rng = np.random.default_rng(params.seed)
    n_cat = _num_categories(params.shapes)
    categories = [Category(c, _category_name(c)) for c in range(1, n_cat + 1)]
    videos, annotations, masks, clips = [], [], {}, []
    next_ann = 1
    for vid in range(1, params.videos + 1):
        videos.append(Video(vid, params.width, params.height, params.frames))
        cats = [int(c) + 1 for c in rng.choice(n_cat, size=params.shapes, replace=False)]
        grid = _render_video(rng, params, cats)
        image_masks = _upscale(grid)
        for j in range(params.shapes):
            segs, boxes = [], []
            for t in range(params.frames):
                box = mask_to_box(image_masks[j, t])
                segs.append(None if box is None else rle_encode(image_masks[j, t]))
                boxes.append(None if box is None else box.to_xywh())
            annotations.append(Annotation(next_ann, vid, cats[j], segs, boxes))
            masks[next_ann] = image_masks[j]
            next_ann += 1
        clips.extend(_oracle_clips(vid, grid, image_masks, cats, params))
    config = EngineConfig(head_variant="yolact", T=params.T, T_o=params.T_o, d=params.embed_dim, k=params.shapes)
    return SynthData(AnnotationSet(videos, categories, annotations), masks, clips, config.validate())


def write_synth(data: SynthData, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"annotations": out / "annotations.json", "netout": out / "netout.cco", "config": out / "config.json"}
    write_annotations(data.annotations, paths["annotations"])
    write_container(paths["netout"], data.clips)
    write_config(data.config, paths["config"])
    return paths
