"""Kernel dispatch.

The compiled ``cico._kernels`` extension is used when it imports; otherwise
the NumPy versions in ``cico._kernels_py`` are used. Setting the environment
variable ``CICO_PURE_PYTHON=1`` forces the fallback.

``BACKEND`` names the active implementation (``"cython"`` or ``"numpy"``);
``IMPLEMENTATIONS`` maps every importable backend name to a namespace with the
same five functions, for tests and benchmarks.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

from cico import _kernels_py

try:
    from cico import _kernels as _ext
except ImportError:
    _ext = None


def _u8(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.uint8)


def _f64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def _wrap_ext(ext) -> SimpleNamespace:
    return SimpleNamespace(
        rle_encode=lambda mask: ext.rle_encode(_u8(mask)),
        rle_decode=lambda counts, h, w: ext.rle_decode(np.ascontiguousarray(counts, dtype=np.int64), int(h), int(w)),
        inter_union=lambda a, b: ext.inter_union(_u8(a).ravel(), _u8(b).ravel()),
        conv3d_valid=lambda x, w: ext.conv3d_valid(_f64(x), _f64(w)),
        nms_order=lambda boxes, order, thresh: ext.nms_order(
            _f64(boxes), np.ascontiguousarray(order, dtype=np.int_), float(thresh)
        ),
    )


IMPLEMENTATIONS = {
    "numpy": SimpleNamespace(
        rle_encode=_kernels_py.rle_encode,
        rle_decode=_kernels_py.rle_decode,
        inter_union=_kernels_py.inter_union,
        conv3d_valid=_kernels_py.conv3d_valid,
        nms_order=_kernels_py.nms_order,
    )
}
if _ext is not None:
    IMPLEMENTATIONS["cython"] = _wrap_ext(_ext)

if _ext is not None and os.environ.get("CICO_PURE_PYTHON", "") not in ("1", "true", "yes"):
    BACKEND = "cython"
else:
    BACKEND = "numpy"

_active = IMPLEMENTATIONS[BACKEND]
rle_encode = _active.rle_encode
rle_decode = _active.rle_decode
inter_union = _active.inter_union
conv3d_valid = _active.conv3d_valid
nms_order = _active.nms_order

__all__ = ["BACKEND", "IMPLEMENTATIONS", "rle_encode", "rle_decode", "inter_union", "conv3d_valid", "nms_order"]
