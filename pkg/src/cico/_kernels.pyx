# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Semantics must stay identical to ``_kernels_py``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def rle_encode(const unsigned char[:, ::1] mask):
    cdef Py_ssize_t h = mask.shape[0], w = mask.shape[1]
    cdef Py_ssize_t x, y, n = 0
    cdef unsigned char cur = 0, v
    cdef long run = 0
    # at most one run per pixel plus the leading zero run
    runs_a = np.empty(h * w + 1, dtype=np.int64)
    cdef long long[::1] runs = runs_a
    for x in range(w):
        for y in range(h):
            v = 1 if mask[y, x] else 0
            if v != cur:
                runs[n] = run
                n += 1
                run = 0
                cur = v
            run += 1
    runs[n] = run
    return runs_a[:n + 1].tolist()


def rle_decode(const long long[::1] counts, Py_ssize_t h, Py_ssize_t w):
    out_f = np.zeros(h * w, dtype=np.uint8)
    cdef unsigned char[::1] out = out_f
    cdef Py_ssize_t pos = 0, i, k
    for k in range(counts.shape[0]):
        if k & 1:
            for i in range(pos, pos + counts[k]):
                out[i] = 1
        pos += counts[k]
    # column-major storage -> (h, w)
    return out_f.reshape((w, h)).T.copy()


def inter_union(const unsigned char[::1] a, const unsigned char[::1] b):
    cdef Py_ssize_t i, n = a.shape[0]
    cdef long inter = 0, union = 0
    cdef unsigned char p, q
    for i in range(n):
        p = a[i] != 0
        q = b[i] != 0
        inter += p & q
        union += p | q
    return inter, union


def conv3d_valid(const double[:, :, :, ::1] x, const double[:, :, :, :, ::1] w):
    cdef Py_ssize_t kt = w.shape[0], kh = w.shape[1], kw = w.shape[2]
    cdef Py_ssize_t cin = w.shape[3], cout = w.shape[4]
    cdef Py_ssize_t to = x.shape[0] - kt + 1
    cdef Py_ssize_t ho = x.shape[1] - kh + 1
    cdef Py_ssize_t wo = x.shape[2] - kw + 1
    out_a = np.zeros((to, ho, wo, cout), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_a
    cdef Py_ssize_t t, yy, xx, dt, dy, dx, ci, co
    cdef double v
    for t in range(to):
        for yy in range(ho):
            for xx in range(wo):
                for dt in range(kt):
                    for dy in range(kh):
                        for dx in range(kw):
                            for ci in range(cin):
                                v = x[t + dt, yy + dy, xx + dx, ci]
                                if v == 0.0:
                                    continue
                                for co in range(cout):
                                    out[t, yy, xx, co] += v * w[dt, dy, dx, ci, co]
    return out_a


def nms_order(const double[:, ::1] boxes, const long[::1] order, double thresh):
    cdef Py_ssize_t n = order.shape[0], i, j, a, b
    cdef double ix1, iy1, ix2, iy2, inter, union, area_a, area_b
    suppressed_a = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] suppressed = suppressed_a
    keep = []
    for i in range(n):
        if suppressed[i]:
            continue
        a = order[i]
        keep.append(a)
        area_a = (boxes[a, 2] - boxes[a, 0]) * (boxes[a, 3] - boxes[a, 1])
        for j in range(i + 1, n):
            if suppressed[j]:
                continue
            b = order[j]
            ix1 = max(boxes[a, 0], boxes[b, 0])
            iy1 = max(boxes[a, 1], boxes[b, 1])
            ix2 = min(boxes[a, 2], boxes[b, 2])
            iy2 = min(boxes[a, 3], boxes[b, 3])
            if ix2 <= ix1 or iy2 <= iy1:
                continue
            inter = (ix2 - ix1) * (iy2 - iy1)
            area_b = (boxes[b, 2] - boxes[b, 0]) * (boxes[b, 3] - boxes[b, 1])
            union = area_a + area_b - inter
            if union > 0 and inter / union > thresh:
                suppressed[j] = 1
    return keep
