"""Forward-only clip-level prediction heads (CPH) and clip-level mask head (CMH).

Feature cubes are ``(T, h, w, C)`` arrays. Conv weights are stored as
``(kt, kh, kw, C_in, C_out)``. Spatial padding is zero padding; temporal
padding replicates the edge frames, so a temporally constant input stays
temporally constant through every layer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from cico import kernels
from cico.primitives import Box


@dataclass
class ConvLayerSpec:
    weight: np.ndarray
    bias: np.ndarray
    kind: str = "3d"
    padding: Optional[tuple[int, int, int]] = None
    relu: bool = True

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.kind not in ("2d", "3d"):
            raise ValueError(f"conv kind must be '2d' or '3d', got {self.kind!r}")
        if self.weight.ndim != 5:
            raise ValueError(f"conv weight must be (kt, kh, kw, cin, cout), got shape {self.weight.shape}")
        if self.kind == "2d" and self.weight.shape[0] != 1:
            raise ValueError("2d conv layers must have temporal kernel size 1")
        if self.bias.shape != (self.weight.shape[4],):
            raise ValueError(f"bias shape {self.bias.shape} does not match {self.weight.shape[4]} output channels")
        if self.padding is None:
            kt, kh, kw = self.weight.shape[:3]
            self.padding = (kt // 2, kh // 2, kw // 2)

    @property
    def kernel(self) -> tuple[int, int, int]:
        return tuple(self.weight.shape[:3])

    @property
    def in_channels(self) -> int:
        return self.weight.shape[3]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[4]


def conv_forward(x: np.ndarray, layer: ConvLayerSpec) -> np.ndarray:
    """Stride-1 cross-correlation of a ``(T, h, w, C)`` cube, plus bias and optional relu."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ValueError(f"feature cube must be (T, h, w, C), got shape {x.shape}")
    if x.shape[3] != layer.in_channels:
        raise ValueError(f"layer expects {layer.in_channels} input channels, cube has {x.shape[3]}")
    pt, ph, pw = layer.padding
    if layer.kind == "2d":
        pt = 0
    x = np.pad(x, ((pt, pt), (0, 0), (0, 0), (0, 0)), mode="edge")
    x = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    kt, kh, kw = layer.kernel
    if x.shape[0] < kt or x.shape[1] < kh or x.shape[2] < kw:
        raise ValueError(f"kernel {layer.kernel} larger than padded input {x.shape[:3]}")
    out = kernels.conv3d_valid(x, layer.weight) + layer.bias
    if layer.relu:
        out = np.maximum(out, 0.0)
    return out


def deconv2x_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, relu: bool = True) -> np.ndarray:
    """Per-frame transposed conv, kernel 2 stride 2: ``(T, h, w, C) -> (T, 2h, 2w, C')``.

    ``weight`` has shape ``(2, 2, C, C')``.
    """
    x = np.asarray(x, dtype=np.float64)
    T, h, w, _ = x.shape
    y = np.einsum("thwc,ijco->thiwjo", x, weight)
    out = y.reshape(T, 2 * h, 2 * w, weight.shape[-1]) + bias
    return np.maximum(out, 0.0) if relu else out


# ---------------------------------------------------------------- anchors / boxes


@dataclass
class AnchorConfig:
    scales: tuple[float, ...] = (24.0, 48.0, 96.0, 192.0, 384.0)
    ratios: tuple[float, ...] = (0.5, 1.0, 2.0)
    strides: tuple[int, ...] = (8, 16, 32, 64, 128)

    def __post_init__(self):
        self.scales = tuple(float(s) for s in self.scales)
        self.ratios = tuple(float(r) for r in self.ratios)
        self.strides = tuple(int(s) for s in self.strides)
        if len(self.scales) != len(self.strides):
            raise ValueError("anchor scales and strides must have one entry per level")
        if any(s <= 0 for s in self.scales) or any(r <= 0 for r in self.ratios) or any(s <= 0 for s in self.strides):
            raise ValueError("anchor scales, ratios and strides must be positive")

    @property
    def num_anchors(self) -> int:
        return len(self.ratios)


def generate_anchors(cfg: AnchorConfig, level_dims: Sequence[tuple[int, int]]) -> np.ndarray:
    """All anchors as an ``(N, 4)`` array, ordered by level, row, column, ratio.

    Ratio is width / height; each anchor has area ``scale**2``.
    """
    out = []
    for level, (h, w) in enumerate(level_dims):
        stride = cfg.strides[level]
        scale = cfg.scales[level]
        ratios = np.asarray(cfg.ratios)
        aw = scale * np.sqrt(ratios)
        ah = scale / np.sqrt(ratios)
        cy, cx = np.meshgrid((np.arange(h) + 0.5) * stride, (np.arange(w) + 0.5) * stride, indexing="ij")
        cx = cx[..., None]
        cy = cy[..., None]
        boxes = np.stack(np.broadcast_arrays(cx - aw / 2, cy - ah / 2, cx + aw / 2, cy + ah / 2), axis=-1)
        out.append(boxes.reshape(-1, 4))
    if not out:
        return np.zeros((0, 4))
    return np.concatenate(out, axis=0)


BOX_VARIANCES = (0.1, 0.2)


def decode_boxes(anchor: Sequence[float], regression: np.ndarray, variances=BOX_VARIANCES) -> np.ndarray:
    """Decode ``4T`` SSD-style offsets against one anchor into ``(T, 4)`` boxes."""
    ax1, ay1, ax2, ay2 = anchor
    aw, ah = ax2 - ax1, ay2 - ay1
    acx, acy = ax1 + aw / 2, ay1 + ah / 2
    reg = np.asarray(regression, dtype=np.float64).reshape(-1, 4)
    cx = acx + reg[:, 0] * variances[0] * aw
    cy = acy + reg[:, 1] * variances[0] * ah
    w = aw * np.exp(reg[:, 2] * variances[1])
    h = ah * np.exp(reg[:, 3] * variances[1])
    return np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=-1)


def encode_boxes(anchor: Sequence[float], boxes: np.ndarray, variances=BOX_VARIANCES) -> np.ndarray:
    """Inverse of :func:`decode_boxes`: ``(T, 4)`` boxes to a flat ``4T`` regression vector."""
    ax1, ay1, ax2, ay2 = anchor
    aw, ah = ax2 - ax1, ay2 - ay1
    acx, acy = ax1 + aw / 2, ay1 + ah / 2
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    w = b[:, 2] - b[:, 0]
    h = b[:, 3] - b[:, 1]
    cx = b[:, 0] + w / 2
    cy = b[:, 1] + h / 2
    reg = np.stack(
        [
            (cx - acx) / (variances[0] * aw),
            (cy - acy) / (variances[0] * ah),
            np.log(w / aw) / variances[1],
            np.log(h / ah) / variances[1],
        ],
        axis=-1,
    )
    return reg.ravel()


# ---------------------------------------------------------------- CPH


@dataclass
class CphConfig:
    num_classes: int
    embed_dim: int = 32
    mask_params: int = 32
    num_anchors: int = 3
    tower_depth: int = 4
    box_kind: str = "3d"
    track_kind: str = "3d"
    cls_kind: str = "2d"

    def __post_init__(self):
        for kind in (self.box_kind, self.track_kind, self.cls_kind):
            if kind not in ("2d", "3d"):
                raise ValueError(f"branch kind must be '2d' or '3d', got {kind!r}")


@dataclass
class CphWeights:
    box_tower: list[ConvLayerSpec]
    box_pred: ConvLayerSpec
    track_tower: list[ConvLayerSpec]
    track_pred: ConvLayerSpec
    cls_tower: list[ConvLayerSpec]
    cls_pred: ConvLayerSpec


@dataclass
class RawClipPredictions:
    """Per-anchor clip-level outputs of one FPN level, ordered (row, column, anchor)."""

    class_logits: np.ndarray  # (N, c)
    embeddings: np.ndarray  # (N, d)
    box_regression: np.ndarray  # (N, 4T)
    mask_params: np.ndarray  # (N, k')

    def __len__(self) -> int:
        return len(self.class_logits)


def _layer(rng, kind, kt, cin, cout, relu, std, padding=None) -> ConvLayerSpec:
    k = 3
    w = rng.normal(0.0, std, size=(kt, k, k, cin, cout)) if std > 0 else np.zeros((kt, k, k, cin, cout))
    b = rng.normal(0.0, std, size=cout) if std > 0 else np.zeros(cout)
    return ConvLayerSpec(w, b, kind=kind, padding=padding, relu=relu)


def init_cph_weights(cfg: CphConfig, in_channels: int, T: int, rng: np.random.Generator, std: float = 0.05) -> CphWeights:
    """Random (or, with ``std=0``, all-zero) CPH weights consistent with ``cfg``."""
    A = cfg.num_anchors

    def tower(kind):
        kt = 3 if kind == "3d" else 1
        return [_layer(rng, kind, kt, in_channels, in_channels, True, std) for _ in range(cfg.tower_depth)]

    def pred(kind, cout):
        # a 3d prediction layer spans the whole clip with no temporal padding
        if kind == "3d":
            return _layer(rng, "3d", T, in_channels, cout, False, std, padding=(0, 1, 1))
        return _layer(rng, "2d", 1, in_channels, cout, False, std)

    return CphWeights(
        box_tower=tower(cfg.box_kind),
        box_pred=pred(cfg.box_kind, A * (4 * T + cfg.mask_params)),
        track_tower=tower(cfg.track_kind),
        track_pred=pred(cfg.track_kind, A * cfg.embed_dim),
        cls_tower=tower(cfg.cls_kind),
        cls_pred=pred(cfg.cls_kind, A * cfg.num_classes),
    )


def _run_branch(x: np.ndarray, tower: list[ConvLayerSpec], pred: ConvLayerSpec) -> np.ndarray:
    for layer in tower:
        x = conv_forward(x, layer)
    out = conv_forward(x, pred)
    # a 2d branch (or a 3d pred with temporal padding) leaves T slices: pool them
    return out.mean(axis=0)


def cph_forward(features: Sequence[np.ndarray], cfg: CphConfig, weights: CphWeights) -> list[RawClipPredictions]:
    """Run the clip-level prediction heads on each FPN level's ``(T, h, w, C)`` cube."""
    A = cfg.num_anchors
    results = []
    for x in features:
        x = np.asarray(x, dtype=np.float64)
        T, h, w, _ = x.shape
        box = _run_branch(x, weights.box_tower, weights.box_pred)
        track = _run_branch(x, weights.track_tower, weights.track_pred)
        cls = _run_branch(x, weights.cls_tower, weights.cls_pred)
        n_box = 4 * T + cfg.mask_params
        if box.shape[-1] != A * n_box or track.shape[-1] != A * cfg.embed_dim or cls.shape[-1] != A * cfg.num_classes:
            raise ValueError("CPH weights inconsistent with config and clip length")
        box = box.reshape(h * w * A, n_box)
        results.append(
            RawClipPredictions(
                class_logits=cls.reshape(h * w * A, cfg.num_classes),
                embeddings=track.reshape(h * w * A, cfg.embed_dim),
                box_regression=box[:, : 4 * T],
                mask_params=box[:, 4 * T:],
            )
        )
    return results


# ---------------------------------------------------------------- CMH


@dataclass
class CmhWeights:
    convs: list[ConvLayerSpec]  # three 3x3x3, relu
    deconv_weight: np.ndarray  # (2, 2, C, C)
    deconv_bias: np.ndarray
    refine: ConvLayerSpec  # 1x3x3, relu
    project: ConvLayerSpec  # 1x1x1, C -> k, linear

    @classmethod
    def random(cls, channels: int, k: int, rng: np.random.Generator, std: float = 0.05) -> "CmhWeights":
        def normal(*shape):
            return rng.normal(0.0, std, size=shape) if std > 0 else np.zeros(shape)

        C = channels
        return cls(
            convs=[ConvLayerSpec(normal(3, 3, 3, C, C), normal(C)) for _ in range(3)],
            deconv_weight=normal(2, 2, C, C),
            deconv_bias=normal(C),
            refine=ConvLayerSpec(normal(1, 3, 3, C, C), normal(C)),
            project=ConvLayerSpec(normal(1, 1, 1, C, k), normal(k), relu=False),
        )


def cmh_forward(fused: np.ndarray, weights: CmhWeights) -> np.ndarray:
    """Clip-level prototypes ``(T, 2h, 2w, k)`` from the fused P3-resolution cube."""
    x = np.asarray(fused, dtype=np.float64)
    for layer in weights.convs:
        x = conv_forward(x, layer)
    x = deconv2x_forward(x, weights.deconv_weight, weights.deconv_bias)
    x = conv_forward(x, weights.refine)
    return conv_forward(x, weights.project)


def anchor_count(level_dims: Sequence[tuple[int, int]], num_anchors: int) -> int:
    return sum(h * w for h, w in level_dims) * num_anchors


def anchor_box(anchors: np.ndarray, i: int) -> Box:
    return Box(*(float(v) for v in anchors[i]))
