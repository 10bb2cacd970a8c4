"""CCO1 binary tensor container for per-clip network outputs and head weights.

Layout (all integers little-endian)::

    b"CCO1" | version:u32 | header_len:u64 | header JSON (UTF-8) | payload

The header is ``{"clips": [...], "tensors": [...]}``. Every tensor record is
``{"name", "shape", "dtype": "f32", "offset"}`` with ``offset`` counted from
the start of the payload; payloads are raw little-endian float32, row-major.
Clip tensors are named ``clip<i>/<tensor>``; free-standing tensors (head
weights) use any other name.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from math import prod
from pathlib import Path
from typing import Optional

import numpy as np

from cico.heads import AnchorConfig, anchor_count, decode_boxes, generate_anchors

MAGIC = b"CCO1"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")
_DTYPE = np.dtype("<f4")

CLIP_META_KEYS = (
    "video_id",
    "clip_index",
    "frame_start",
    "frame_end",
    "head_variant",
    "image_height",
    "image_width",
    "video_length",
)
_REQUIRED_TENSORS = ("prototypes", "scores", "embeddings", "mask_params")


class FormatError(ValueError):
    """A file does not follow its format."""


@dataclass
class ClipNetOut:
    video_id: int
    clip_index: int
    frame_start: int
    frame_end: int
    head_variant: str
    image_height: int
    image_width: int
    video_length: int
    prototypes: np.ndarray  # (T, Hp, Wp, k)
    scores: np.ndarray  # (N, c+1), column 0 is background
    embeddings: np.ndarray  # (N, d)
    mask_params: np.ndarray  # (N, k')
    boxes: Optional[np.ndarray] = None  # (N, T, 4) absolute xyxy
    box_regression: Optional[np.ndarray] = None  # (N, 4T)
    anchor_config: Optional[AnchorConfig] = None
    level_dims: Optional[list[tuple[int, int]]] = None

    @property
    def num_frames(self) -> int:
        return self.frame_end - self.frame_start + 1

    @property
    def frames(self) -> range:
        return range(self.frame_start, self.frame_end + 1)

    def __len__(self) -> int:
        return len(self.scores)

    def anchors(self) -> np.ndarray:
        if self.anchor_config is None or self.level_dims is None:
            raise FormatError(f"clip {self.clip_index}: no anchor config")
        return generate_anchors(self.anchor_config, self.level_dims)

    def decoded_boxes(self) -> np.ndarray:
        """Per-record ``(N, T, 4)`` boxes, decoding regressions when needed."""
        if self.boxes is not None:
            return self.boxes
        anchors = self.anchors()
        return np.stack([decode_boxes(a, r) for a, r in zip(anchors, self.box_regression)]).reshape(-1, self.num_frames, 4)

    def validate(self) -> None:
        where = f"clip {self.clip_index} of video {self.video_id}"
        T = self.num_frames
        if T < 1 or self.frame_start < 0 or self.frame_end >= self.video_length:
            raise FormatError(f"{where}: frame range [{self.frame_start}, {self.frame_end}] invalid for length {self.video_length}")
        if self.head_variant not in ("yolact", "condinst"):
            raise FormatError(f"{where}: unknown head_variant {self.head_variant!r}")
        p = self.prototypes
        if p.ndim != 4 or p.shape[0] != T:
            raise FormatError(f"{where}: prototypes shape {p.shape} does not match T={T}")
        n = len(self.scores)
        if self.scores.ndim != 2 or self.scores.shape[1] < 2:
            raise FormatError(f"{where}: scores must be (N, c+1) with c >= 1, got {self.scores.shape}")
        for name in ("embeddings", "mask_params"):
            arr = getattr(self, name)
            if arr.ndim != 2 or arr.shape[0] != n:
                raise FormatError(f"{where}: {name} shape {arr.shape} inconsistent with N={n}")
        if (self.boxes is None) == (self.box_regression is None):
            raise FormatError(f"{where}: exactly one of boxes / box_regression must be present")
        if self.boxes is not None and self.boxes.shape != (n, T, 4):
            raise FormatError(f"{where}: boxes shape {self.boxes.shape}, expected {(n, T, 4)}")
        if self.box_regression is not None:
            if self.box_regression.shape != (n, 4 * T):
                raise FormatError(f"{where}: box_regression shape {self.box_regression.shape}, expected {(n, 4 * T)}")
            if self.anchor_config is None or self.level_dims is None:
                raise FormatError(f"{where}: box_regression requires anchor_config and level_dims")
            expected = anchor_count(self.level_dims, self.anchor_config.num_anchors)
            if expected != n:
                raise FormatError(f"{where}: {n} records but anchor config yields {expected} anchors")


@dataclass
class NetOutContainer:
    clips: list[ClipNetOut]
    tensors: dict[str, np.ndarray]

    def videos(self) -> dict[int, list[ClipNetOut]]:
        out: dict[int, list[ClipNetOut]] = {}
        for clip in self.clips:
            out.setdefault(clip.video_id, []).append(clip)
        for clips in out.values():
            clips.sort(key=lambda c: c.clip_index)
        return out


def _clip_tensors(clip: ClipNetOut) -> dict[str, np.ndarray]:
    out = {name: getattr(clip, name) for name in _REQUIRED_TENSORS}
    if clip.boxes is not None:
        out["boxes"] = clip.boxes
    if clip.box_regression is not None:
        out["box_regression"] = clip.box_regression
    return out


def _clip_meta(clip: ClipNetOut) -> dict:
    meta = {k: getattr(clip, k) for k in CLIP_META_KEYS}
    if clip.anchor_config is not None:
        a = clip.anchor_config
        meta["anchor_config"] = {"scales": list(a.scales), "ratios": list(a.ratios), "strides": list(a.strides)}
    if clip.level_dims is not None:
        meta["level_dims"] = [list(d) for d in clip.level_dims]
    return meta


def write_container(path, clips: list[ClipNetOut], tensors: Optional[dict[str, np.ndarray]] = None) -> None:
    records = []
    blobs = []
    offset = 0

    def add(name, arr):
        nonlocal offset
        data = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
        records.append({"name": name, "shape": list(np.shape(arr)), "dtype": "f32", "offset": offset})
        blobs.append(data)
        offset += len(data)

    clip_meta = []
    for i, clip in enumerate(clips):
        clip.validate()
        clip_meta.append(_clip_meta(clip))
        for name, arr in _clip_tensors(clip).items():
            add(f"clip{i}/{name}", arr)
    for name, arr in (tensors or {}).items():
        if name.startswith("clip"):
            raise ValueError(f"free tensor name {name!r} may not start with 'clip'")
        add(name, arr)
    header = json.dumps({"clips": clip_meta, "tensors": records}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def _int(meta: dict, key: str, where: str) -> int:
    v = meta.get(key)
    if not isinstance(v, int) or isinstance(v, bool):
        raise FormatError(f"{where}: metadata field {key!r} must be an integer, got {v!r}")
    return v


def read_container(path) -> NetOutContainer:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise FormatError(f"{path}: file too short for a CCO1 header")
    magic, version, header_len = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}, expected {VERSION}")
    start = _PREFIX.size
    if start + header_len > len(raw):
        raise FormatError(f"{path}: header length {header_len} runs past end of file")
    try:
        header = json.loads(raw[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: header is not valid JSON: {e}") from None
    if not isinstance(header, dict) or set(header) != {"clips", "tensors"}:
        raise FormatError(f"{path}: header must have exactly the keys 'clips' and 'tensors'")
    payload = memoryview(raw)[start + header_len:]

    tensors: dict[str, np.ndarray] = {}
    spans = []
    for k, rec in enumerate(header["tensors"]):
        if not isinstance(rec, dict) or set(rec) != {"name", "shape", "dtype", "offset"}:
            raise FormatError(f"{path}: tensor record {k} must have keys name, shape, dtype, offset")
        name = rec["name"]
        if rec["dtype"] != "f32":
            raise FormatError(f"{path}: tensor {name!r} has unsupported dtype {rec['dtype']!r}")
        shape = rec["shape"]
        if not isinstance(shape, list) or not all(isinstance(s, int) and s >= 0 for s in shape):
            raise FormatError(f"{path}: tensor {name!r} has invalid shape {shape!r}")
        off = rec["offset"]
        if not isinstance(off, int) or off < 0:
            raise FormatError(f"{path}: tensor {name!r} has invalid offset {off!r}")
        nbytes = 4 * prod(shape)
        if off + nbytes > len(payload):
            raise FormatError(
                f"{path}: tensor {name!r} needs {nbytes} bytes at offset {off}, payload has {len(payload) - off if off <= len(payload) else 0}"
            )
        if name in tensors:
            raise FormatError(f"{path}: duplicate tensor name {name!r}")
        spans.append((off, off + nbytes, name))
        tensors[name] = np.frombuffer(payload[off:off + nbytes], dtype=_DTYPE).reshape(shape).astype(np.float64)
    spans.sort()
    for (a0, a1, an), (b0, b1, bn) in zip(spans, spans[1:]):
        if b0 < a1:
            raise FormatError(f"{path}: tensors {an!r} and {bn!r} overlap")
    used = sum(b - a for a, b, _ in spans)
    if used != len(payload):
        raise FormatError(f"{path}: payload is {len(payload)} bytes but tensors account for {used}")

    clips = []
    for i, meta in enumerate(header["clips"]):
        where = f"{path}: clip {i}"
        if not isinstance(meta, dict):
            raise FormatError(f"{where}: metadata must be an object")
        allowed = set(CLIP_META_KEYS) | {"anchor_config", "level_dims"}
        extra = set(meta) - allowed
        if extra:
            raise FormatError(f"{where}: unknown metadata fields {sorted(extra)}")
        fields = {k: _int(meta, k, where) for k in CLIP_META_KEYS if k != "head_variant"}
        fields["head_variant"] = meta.get("head_variant")

        def tensor(name, required=True):
            arr = tensors.pop(f"clip{i}/{name}", None)
            if arr is None and required:
                raise FormatError(f"{where}: missing tensor {name!r}")
            return arr

        anchor_cfg = None
        if "anchor_config" in meta:
            try:
                anchor_cfg = AnchorConfig(**meta["anchor_config"])
            except (TypeError, ValueError) as e:
                raise FormatError(f"{where}: bad anchor_config: {e}") from None
        level_dims = None
        if "level_dims" in meta:
            level_dims = [tuple(int(v) for v in d) for d in meta["level_dims"]]
        clip = ClipNetOut(
            **fields,
            prototypes=tensor("prototypes"),
            scores=tensor("scores"),
            embeddings=tensor("embeddings"),
            mask_params=tensor("mask_params"),
            boxes=tensor("boxes", required=False),
            box_regression=tensor("box_regression", required=False),
            anchor_config=anchor_cfg,
            level_dims=level_dims,
        )
        try:
            clip.validate()
        except FormatError as e:
            raise FormatError(f"{path}: {e}") from None
        clips.append(clip)
    stray = [n for n in tensors if n.startswith("clip")]
    if stray:
        raise FormatError(f"{path}: tensors {stray} do not belong to any clip")
    return NetOutContainer(clips, tensors)
