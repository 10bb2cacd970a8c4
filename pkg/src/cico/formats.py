"""JSON file formats: annotation sets, tracked results and the engine config."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import numpy as np

from cico.heads import AnchorConfig
from cico.inference import InferenceConfig
from cico.netout import FormatError
from cico.primitives import Box, Rle, rle_decode, rle_encode
from cico.tracking import MatchScoreConfig
from cico.training import LossWeights, MatcherConfig


def _load_json(path) -> Any:
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from None


def _dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _expect_keys(obj, required: set, where: str, optional: set = frozenset()) -> None:
    if not isinstance(obj, dict):
        raise FormatError(f"{where}: expected an object, got {type(obj).__name__}")
    missing = required - set(obj)
    if missing:
        raise FormatError(f"{where}: missing keys {sorted(missing)}")
    extra = set(obj) - required - set(optional)
    if extra:
        raise FormatError(f"{where}: unknown keys {sorted(extra)}")


def _expect_int(v, where: str) -> int:
    if not isinstance(v, int) or isinstance(v, bool):
        raise FormatError(f"{where}: expected an integer, got {v!r}")
    return v


def _rle(obj, where: str, height: int, width: int) -> Optional[Rle]:
    if obj is None:
        return None
    try:
        rle = Rle.from_json(obj)
    except ValueError as e:
        raise FormatError(f"{where}: {e}") from None
    if (rle.height, rle.width) != (height, width):
        raise FormatError(f"{where}: RLE size {rle.height}x{rle.width} does not match video {height}x{width}")
    return rle


# ------------------------------------------------------------------ annotations


@dataclass
class Video:
    id: int
    width: int
    height: int
    length: int


@dataclass
class Category:
    id: int
    name: str


@dataclass
class Annotation:
    id: int
    video_id: int
    category_id: int
    segmentations: list[Optional[Rle]]
    bboxes: list[Optional[list[float]]]  # [x, y, w, h] or None per frame

    def frames(self) -> list[int]:
        return [t for t, s in enumerate(self.segmentations) if s is not None]

    def box_track(self) -> dict[int, Box]:
        return {t: Box.from_xywh(b) for t, b in enumerate(self.bboxes) if b is not None}

    def mask_track(self) -> dict[int, np.ndarray]:
        return {t: rle_decode(s) for t, s in enumerate(self.segmentations) if s is not None}


@dataclass
class AnnotationSet:
    videos: list[Video]
    categories: list[Category]
    annotations: list[Annotation]

    def video(self, video_id: int) -> Video:
        for v in self.videos:
            if v.id == video_id:
                return v
        raise KeyError(video_id)

    def by_video(self) -> dict[int, list[Annotation]]:
        out: dict[int, list[Annotation]] = {v.id: [] for v in self.videos}
        for a in self.annotations:
            out[a.video_id].append(a)
        return out

    def to_json(self) -> dict:
        return {
            "videos": [asdict(v) for v in self.videos],
            "categories": [asdict(c) for c in self.categories],
            "annotations": [
                {
                    "id": a.id,
                    "video_id": a.video_id,
                    "category_id": a.category_id,
                    "segmentations": [None if s is None else s.to_json() for s in a.segmentations],
                    "bboxes": [None if b is None else [float(v) for v in b] for b in a.bboxes],
                }
                for a in self.annotations
            ],
        }

    @classmethod
    def from_json(cls, doc, where: str = "annotations") -> "AnnotationSet":
        _expect_keys(doc, {"videos", "categories", "annotations"}, where)
        videos = []
        for i, v in enumerate(doc["videos"]):
            w = f"{where}: videos[{i}]"
            _expect_keys(v, {"id", "width", "height", "length"}, w)
            video = Video(*(_expect_int(v[k], f"{w}.{k}") for k in ("id", "width", "height", "length")))
            if min(video.width, video.height, video.length) < 1:
                raise FormatError(f"{w}: width, height and length must be positive")
            videos.append(video)
        vids = {v.id: v for v in videos}
        if len(vids) != len(videos):
            raise FormatError(f"{where}: duplicate video ids")
        categories = []
        for i, c in enumerate(doc["categories"]):
            w = f"{where}: categories[{i}]"
            _expect_keys(c, {"id", "name"}, w)
            if not isinstance(c["name"], str):
                raise FormatError(f"{w}.name: expected a string")
            categories.append(Category(_expect_int(c["id"], f"{w}.id"), c["name"]))
        cat_ids = {c.id for c in categories}
        if len(cat_ids) != len(categories):
            raise FormatError(f"{where}: duplicate category ids")
        annotations = []
        seen = set()
        for i, a in enumerate(doc["annotations"]):
            w = f"{where}: annotations[{i}]"
            _expect_keys(a, {"id", "video_id", "category_id", "segmentations", "bboxes"}, w)
            aid = _expect_int(a["id"], f"{w}.id")
            if aid in seen:
                raise FormatError(f"{w}: duplicate annotation id {aid}")
            seen.add(aid)
            video = vids.get(a["video_id"])
            if video is None:
                raise FormatError(f"{w}: unknown video_id {a['video_id']!r}")
            if a["category_id"] not in cat_ids:
                raise FormatError(f"{w}: unknown category_id {a['category_id']!r}")
            segs, boxes = a["segmentations"], a["bboxes"]
            if not isinstance(segs, list) or len(segs) != video.length:
                raise FormatError(f"{w}.segmentations: expected {video.length} entries")
            if not isinstance(boxes, list) or len(boxes) != video.length:
                raise FormatError(f"{w}.bboxes: expected {video.length} entries")
            rles = [_rle(s, f"{w}.segmentations[{t}]", video.height, video.width) for t, s in enumerate(segs)]
            parsed_boxes = []
            for t, b in enumerate(boxes):
                if b is None:
                    parsed_boxes.append(None)
                    continue
                if not (isinstance(b, list) and len(b) == 4 and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in b)):
                    raise FormatError(f"{w}.bboxes[{t}]: expected [x, y, w, h]")
                if b[2] < 0 or b[3] < 0:
                    raise FormatError(f"{w}.bboxes[{t}]: negative width or height")
                parsed_boxes.append([float(x) for x in b])
            for t in range(video.length):
                if (rles[t] is None) != (parsed_boxes[t] is None):
                    raise FormatError(f"{w}: frame {t} has a mask without a box or a box without a mask")
            annotations.append(Annotation(aid, video.id, a["category_id"], rles, parsed_boxes))
        return cls(videos, categories, annotations)


def read_annotations(path) -> AnnotationSet:
    return AnnotationSet.from_json(_load_json(path), where=str(path))


def write_annotations(ann: AnnotationSet, path) -> None:
    _dump_json(ann.to_json(), path)


# ------------------------------------------------------------------ results


@dataclass
class ResultEntry:
    video_id: int
    category_id: int
    score: float
    segmentations: list[Optional[Rle]]

    def mask_track(self) -> dict[int, np.ndarray]:
        return {t: rle_decode(s) for t, s in enumerate(self.segmentations) if s is not None}

    def to_json(self) -> dict:
        return {
            "video_id": self.video_id,
            "category_id": self.category_id,
            "score": self.score,
            "segmentations": [None if s is None else s.to_json() for s in self.segmentations],
        }


def results_from_json(doc, where: str = "results", videos: Optional[dict[int, Video]] = None) -> list[ResultEntry]:
    if not isinstance(doc, list):
        raise FormatError(f"{where}: expected a JSON array")
    out = []
    for i, r in enumerate(doc):
        w = f"{where}[{i}]"
        _expect_keys(r, {"video_id", "category_id", "score", "segmentations"}, w)
        vid = _expect_int(r["video_id"], f"{w}.video_id")
        cat = _expect_int(r["category_id"], f"{w}.category_id")
        score = r["score"]
        if not isinstance(score, (int, float)) or isinstance(score, bool) or not 0.0 <= score <= 1.0:
            raise FormatError(f"{w}.score: expected a number in [0, 1], got {score!r}")
        segs = r["segmentations"]
        if not isinstance(segs, list):
            raise FormatError(f"{w}.segmentations: expected a list")
        if videos is not None:
            if vid not in videos:
                raise FormatError(f"{w}: unknown video_id {vid}")
            v = videos[vid]
            if len(segs) != v.length:
                raise FormatError(f"{w}.segmentations: expected {v.length} entries, got {len(segs)}")
            rles = [_rle(s, f"{w}.segmentations[{t}]", v.height, v.width) for t, s in enumerate(segs)]
        else:
            rles = []
            for t, s in enumerate(segs):
                try:
                    rles.append(None if s is None else Rle.from_json(s))
                except ValueError as e:
                    raise FormatError(f"{w}.segmentations[{t}]: {e}") from None
        out.append(ResultEntry(vid, cat, float(score), rles))
    return out


def read_results(path, videos: Optional[dict[int, Video]] = None) -> list[ResultEntry]:
    return results_from_json(_load_json(path), where=str(path), videos=videos)


def write_results(results: list[ResultEntry], path) -> None:
    _dump_json([r.to_json() for r in results], path)


def tracks_to_results(video_id: int, length: int, tracks) -> list[ResultEntry]:
    out = []
    for tr in tracks:
        segs = [rle_encode(tr.masks[t]) if t in tr.masks else None for t in range(length)]
        out.append(ResultEntry(video_id, tr.category_id, min(1.0, max(0.0, tr.score)), segs))
    return out


# ------------------------------------------------------------------ engine config


@dataclass
class EngineConfig:
    head_variant: str = "yolact"
    T: int = 3
    T_o: int = 1
    conf_thresh: float = 0.1
    nms_thresh: float = 0.5
    top_k: int = 100
    alpha1: float = 1.0 / 3.0
    alpha2: float = 1.0 / 3.0
    alpha3: float = 1.0 / 3.0
    tau: float = 0.3
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    lambda4: float = 1.0
    eps_p: float = 0.5
    eps_n: float = 0.4
    anchor_scales: list[float] = field(default_factory=lambda: [24.0, 48.0, 96.0, 192.0, 384.0])
    anchor_ratios: list[float] = field(default_factory=lambda: [0.5, 1.0, 2.0])
    anchor_strides: list[int] = field(default_factory=lambda: [8, 16, 32, 64, 128])
    d: int = 32
    k: int = 32

    def validate(self) -> "EngineConfig":
        def bad(msg):
            raise FormatError(f"config: {msg}")

        if self.head_variant not in ("yolact", "condinst"):
            bad(f"head_variant must be 'yolact' or 'condinst', got {self.head_variant!r}")
        if self.T < 1 or not 0 <= self.T_o < self.T:
            bad(f"need T >= 1 and 0 <= T_o < T, got T={self.T}, T_o={self.T_o}")
        for name in ("conf_thresh", "nms_thresh", "eps_p", "eps_n"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                bad(f"{name} must lie in [0, 1]")
        if self.eps_n > self.eps_p:
            bad("eps_n must not exceed eps_p")
        if self.top_k < 1 or self.d < 1 or self.k < 1:
            bad("top_k, d and k must be positive")
        for name in ("alpha1", "alpha2", "alpha3", "lambda1", "lambda2", "lambda3", "lambda4"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                bad(f"{name} must be finite and non-negative")
        if self.head_variant == "condinst" and self.k != 8:
            bad("condinst head requires k = 8")
        if len(self.anchor_scales) != len(self.anchor_strides):
            bad("anchor_scales and anchor_strides must have the same length")
        if min(self.anchor_scales + self.anchor_ratios + self.anchor_strides, default=1) <= 0:
            bad("anchor scales, ratios and strides must be positive")
        return self

    @classmethod
    def from_json(cls, doc, where: str = "config") -> "EngineConfig":
        if not isinstance(doc, dict):
            raise FormatError(f"{where}: expected an object")
        known = {f.name: f for f in fields(cls)}
        unknown = set(doc) - set(known)
        if unknown:
            raise FormatError(f"{where}: unknown keys {sorted(unknown)}")
        kwargs = {}
        for key, value in doc.items():
            default = getattr(cls(), key)
            if isinstance(default, bool) or isinstance(value, bool):
                raise FormatError(f"{where}.{key}: unexpected boolean")
            if isinstance(default, int) and not isinstance(default, bool):
                if not isinstance(value, int):
                    raise FormatError(f"{where}.{key}: expected an integer, got {value!r}")
            elif isinstance(default, float):
                if not isinstance(value, (int, float)):
                    raise FormatError(f"{where}.{key}: expected a number, got {value!r}")
                value = float(value)
            elif isinstance(default, str):
                if not isinstance(value, str):
                    raise FormatError(f"{where}.{key}: expected a string, got {value!r}")
            elif isinstance(default, list):
                if not isinstance(value, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in value):
                    raise FormatError(f"{where}.{key}: expected a list of numbers")
            kwargs[key] = value
        return cls(**kwargs).validate()

    def to_json(self) -> dict:
        return asdict(self)

    def inference(self):
        return InferenceConfig(self.conf_thresh, self.nms_thresh, self.top_k, self.head_variant)

    def match_score(self):
        return MatchScoreConfig(self.alpha1, self.alpha2, self.alpha3, self.tau)

    def matcher(self):
        return MatcherConfig(self.eps_p, self.eps_n)

    def loss_weights(self):
        return LossWeights(self.lambda1, self.lambda2, self.lambda3, self.lambda4)

    def anchors(self):
        return AnchorConfig(tuple(self.anchor_scales), tuple(self.anchor_ratios), tuple(self.anchor_strides))


def read_config(path) -> EngineConfig:
    return EngineConfig.from_json(_load_json(path), where=str(path))


def write_config(cfg: EngineConfig, path) -> None:
    _dump_json(cfg.validate().to_json(), path)
