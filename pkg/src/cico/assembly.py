"""Instance mask generation from prototypes and per-instance dynamic filters.

Two heads are supported:

* ``yolact``: a linear combination of the ``k`` prototype channels followed by a
  sigmoid and a crop to the circumscribed box.
* ``condinst``: a three-layer 1x1x1 dynamic MLP (10 -> 8 -> 8 -> 1, relu, relu,
  sigmoid) over the 8 prototype channels concatenated with 2 relative-coordinate
  channels. No crop.

Prototype cubes have shape ``(T, Hp, Wp, k)`` at a quarter of the input image
resolution; boxes are given at image resolution.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from cico.primitives import Box, crop

PROTO_STRIDE = 4
CONDINST_CHANNELS = 8
CONDINST_HIDDEN = 8
# (in, out) per layer; weights stored row-major as (in, out) followed by the bias
CONDINST_LAYERS = ((CONDINST_CHANNELS + 2, CONDINST_HIDDEN), (CONDINST_HIDDEN, CONDINST_HIDDEN), (CONDINST_HIDDEN, 1))
CONDINST_NUM_PARAMS = sum(i * o + o for i, o in CONDINST_LAYERS)  # 169

HEADS = ("yolact", "condinst")


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _proto_box(box: Sequence[float]) -> Box:
    return Box.of(box).scaled(1.0 / PROTO_STRIDE)


def _check_cube(protos: np.ndarray) -> np.ndarray:
    protos = np.asarray(protos, dtype=np.float64)
    if protos.ndim != 4 or min(protos.shape) < 1:
        raise ValueError(f"prototype cube must be (T, Hp, Wp, k), got shape {protos.shape}")
    return protos


def frame_mask_yolact(protos: np.ndarray, theta: np.ndarray, box: Sequence[float]) -> np.ndarray:
    """Single-frame Yolact mask from ``(Hp, Wp, k)`` prototypes."""
    protos = np.asarray(protos, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (protos.shape[-1],):
        raise ValueError(f"expected {protos.shape[-1]} mask coefficients, got {theta.shape}")
    logits = np.tensordot(protos, theta, axes=([-1], [0]))
    return crop(sigmoid(logits), _proto_box(box))


def assemble_yolact(protos: np.ndarray, theta: np.ndarray, cbox: Sequence[float]) -> np.ndarray:
    """Clip-level Yolact masks ``(T, Hp, Wp)`` cropped by one circumscribed box."""
    protos = _check_cube(protos)
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (protos.shape[-1],):
        raise ValueError(f"expected {protos.shape[-1]} mask coefficients, got {theta.shape}")
    logits = np.tensordot(protos, theta, axes=([-1], [0]))
    return crop(sigmoid(logits), _proto_box(cbox))


def relative_coords(T: int, Hp: int, Wp: int, center: tuple[float, float]) -> np.ndarray:
    """``(T, Hp, Wp, 2)`` map of ``(dx, dy)`` from each cell to ``center``, divided by ``max(Hp, Wp)``."""
    cx, cy = center
    if not (np.isfinite(cx) and np.isfinite(cy)):
        raise ValueError(f"center must be finite, got {center}")
    scale = float(max(Hp, Wp))
    xs = (np.arange(Wp, dtype=np.float64) - cx) / scale
    ys = (np.arange(Hp, dtype=np.float64) - cy) / scale
    grid = np.stack(np.broadcast_arrays(xs[None, :], ys[:, None]), axis=-1)
    return np.broadcast_to(grid, (T, Hp, Wp, 2)).copy()


def split_condinst_params(theta: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split the flat 169-vector into ``[(W1, b1), (W2, b2), (W3, b3)]``."""
    theta = np.asarray(theta, dtype=np.float64).ravel()
    if theta.size != CONDINST_NUM_PARAMS:
        raise ValueError(f"CondInst mask parameters must have {CONDINST_NUM_PARAMS} values, got {theta.size}")
    layers = []
    pos = 0
    for n_in, n_out in CONDINST_LAYERS:
        w = theta[pos:pos + n_in * n_out].reshape(n_in, n_out)
        pos += n_in * n_out
        b = theta[pos:pos + n_out]
        pos += n_out
        layers.append((w, b))
    return layers


def _condinst_fcn(feats: np.ndarray, theta: np.ndarray) -> np.ndarray:
    (w1, b1), (w2, b2), (w3, b3) = split_condinst_params(theta)
    h = np.maximum(np.tensordot(feats, w1, axes=([-1], [0])) + b1, 0.0)
    h = np.maximum(np.tensordot(h, w2, axes=([-1], [0])) + b2, 0.0)
    return sigmoid(np.tensordot(h, w3, axes=([-1], [0])) + b3)[..., 0]


def _condinst_center(box: Sequence[float]) -> tuple[float, float]:
    return _proto_box(box).center


def frame_mask_condinst(protos: np.ndarray, theta: np.ndarray, box: Sequence[float]) -> np.ndarray:
    """Single-frame CondInst mask from ``(Hp, Wp, 8)`` prototypes."""
    protos = np.asarray(protos, dtype=np.float64)
    if protos.shape[-1] != CONDINST_CHANNELS:
        raise ValueError(f"CondInst needs {CONDINST_CHANNELS} prototype channels, got {protos.shape[-1]}")
    hp, wp = protos.shape[:2]
    coords = relative_coords(1, hp, wp, _condinst_center(box))[0]
    return _condinst_fcn(np.concatenate([protos, coords], axis=-1), theta)


def assemble_condinst(protos: np.ndarray, theta: np.ndarray, cbox: Sequence[float]) -> np.ndarray:
    """Clip-level CondInst masks ``(T, Hp, Wp)``; the box only sets the coordinate origin."""
    protos = _check_cube(protos)
    T, hp, wp, k = protos.shape
    if k != CONDINST_CHANNELS:
        raise ValueError(f"CondInst needs {CONDINST_CHANNELS} prototype channels, got {k}")
    coords = relative_coords(T, hp, wp, _condinst_center(cbox))
    return _condinst_fcn(np.concatenate([protos, coords], axis=-1), theta)


def assemble(head: str, protos: np.ndarray, theta: np.ndarray, cbox: Sequence[float]) -> np.ndarray:
    if head == "yolact":
        return assemble_yolact(protos, theta, cbox)
    if head == "condinst":
        return assemble_condinst(protos, theta, cbox)
    raise ValueError(f"unknown head variant {head!r}; expected one of {HEADS}")


def _bilinear_weights(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel centers, edge clamped (align_corners=False)
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def upsample_bilinear(clip: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    clip = np.asarray(clip, dtype=np.float64)
    h, w = clip.shape[-2:]
    y0, y1, fy = _bilinear_weights(h, out_h)
    x0, x1, fx = _bilinear_weights(w, out_w)
    rows = clip[..., y0, :] * (1.0 - fy)[:, None] + clip[..., y1, :] * fy[:, None]
    return rows[..., x0] * (1.0 - fx) + rows[..., x1] * fx


def finalize_mask(clip: np.ndarray, out_h: int, out_w: int, threshold: float = 0.5) -> np.ndarray:
    """Upsample float masks ``(T, Hp, Wp)`` to ``(T, out_h, out_w)`` and binarize (``> threshold``)."""
    return upsample_bilinear(clip, out_h, out_w) > threshold
