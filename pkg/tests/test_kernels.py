"""Kernel backends: each one against fixed vectors and the slow oracles, and the two against each other."""

import numpy as np
import pytest

import oracles
from cico import kernels
from cico.kernels import IMPLEMENTATIONS


@pytest.mark.parametrize(
    "mask, counts",
    [
        (np.zeros((3, 3)), [9]),
        (np.ones((3, 3)), [0, 9]),
        (np.eye(1, 9, 0).reshape(3, 3), [0, 1, 8]),
    ],
)
def test_rle_fixed_vectors(backend, mask, counts):
    assert list(backend.rle_encode(mask)) == counts
    np.testing.assert_array_equal(backend.rle_decode(counts, 3, 3), mask.astype(np.uint8))


def test_rle_column_major(backend):
    # ones down the first column: runs are read top to bottom before moving right
    mask = np.zeros((2, 3), dtype=np.uint8)
    mask[:, 0] = 1
    assert list(backend.rle_encode(mask)) == [0, 2, 4]
    mask = np.zeros((2, 3), dtype=np.uint8)
    mask[0, :] = 1
    assert list(backend.rle_encode(mask)) == [0, 1, 1, 1, 1, 1, 1]


def test_rle_roundtrip_random(backend, rng):
    for _ in range(50):
        h, w = rng.integers(1, 20, size=2)
        mask = rng.random((h, w)) < rng.random()
        counts = backend.rle_encode(mask)
        assert sum(counts) == h * w
        np.testing.assert_array_equal(backend.rle_decode(counts, h, w).astype(bool), mask)


def test_inter_union(backend, rng):
    a = rng.random((7, 9)) < 0.4
    b = rng.random((7, 9)) < 0.6
    inter, union = backend.inter_union(a, b)
    ref_iou = oracles.pixel_iou(a.tolist(), b.tolist())
    assert inter / union == pytest.approx(ref_iou, abs=1e-15)
    assert backend.inter_union(np.zeros((3, 3)), np.zeros((3, 3))) == (0, 0)


def test_conv3d_valid_matches_direct(backend, rng):
    x = rng.normal(size=(4, 5, 6, 2))
    w = rng.normal(size=(3, 3, 3, 2, 3))
    got = backend.conv3d_valid(x, w)
    want = np.array(oracles.conv_direct(x, w, np.zeros(3), 0, 0, 0, relu=False))
    assert got.shape == want.shape == (2, 3, 4, 3)
    np.testing.assert_allclose(got, want, atol=1e-10)


def test_nms_order(backend):
    boxes = np.array([[0, 0, 10, 10], [1, 1, 10, 10], [20, 20, 30, 30], [0, 0, 10, 9.0]])
    # box 1 overlaps box 0 at 0.81, box 3 at 0.9
    assert list(backend.nms_order(boxes, np.array([0, 1, 2, 3]), 0.5)) == [0, 2]
    assert list(backend.nms_order(boxes, np.array([2, 1, 0, 3]), 0.5)) == [2, 1]
    assert list(backend.nms_order(boxes, np.array([0, 1, 2, 3]), 0.95)) == [0, 1, 2, 3]
    assert list(backend.nms_order(np.zeros((0, 4)), np.zeros(0, dtype=int), 0.5)) == []


@pytest.mark.skipif(len(IMPLEMENTATIONS) < 2, reason="compiled extension not built")
def test_backends_agree(rng):
    py, cy = IMPLEMENTATIONS["numpy"], IMPLEMENTATIONS["cython"]
    for _ in range(20):
        h, w = rng.integers(1, 40, size=2)
        mask = rng.random((h, w)) < 0.5
        assert list(py.rle_encode(mask)) == list(cy.rle_encode(mask))
        other = rng.random((h, w)) < 0.5
        assert py.inter_union(mask, other) == cy.inter_union(mask, other)
    x = rng.normal(size=(3, 6, 6, 4))
    w = rng.normal(size=(3, 3, 3, 4, 5))
    np.testing.assert_allclose(py.conv3d_valid(x, w), cy.conv3d_valid(x, w), atol=1e-10)
    xy = rng.uniform(0, 50, size=(60, 2))
    boxes = np.concatenate([xy, xy + rng.uniform(5, 30, size=(60, 2))], axis=1)
    order = rng.permutation(60)
    assert list(py.nms_order(boxes, order, 0.4)) == list(cy.nms_order(boxes, order, 0.4))


def test_backend_name():
    assert kernels.BACKEND in IMPLEMENTATIONS
