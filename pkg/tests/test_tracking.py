import numpy as np
import pytest

from cico.inference import ClipDetection
from cico.primitives import Box, circumscribed_box
from cico.tracking import MatchScoreConfig, TrackState, link_clips, match_score, merge_video, track_video

THIRD = MatchScoreConfig(1 / 3, 1 / 3, 1 / 3, 0.3)


def det(masks, emb, score=0.9, cat=1, start=0, clip=0):
    masks = np.asarray(masks, bool)
    boxes = []
    for m in masks:
        ys, xs = np.nonzero(m)
        boxes.append([xs.min(), ys.min(), xs.max() + 1, ys.max() + 1] if len(xs) else [0, 0, 0, 0])
    boxes = np.array(boxes, float)
    return ClipDetection(cat, score, np.asarray(emb, float), boxes, circumscribed_box(boxes), clip_index=clip, frame_start=start, masks=masks)


def block(T, x, y, size=3, H=12, W=12):
    m = np.zeros((T, H, W), bool)
    m[:, y:y + size, x:x + size] = True
    return m


class TestMatchScore:
    def test_identical(self):
        d = det(block(3, 1, 1), [1, 0])
        assert match_score(d, d, THIRD) == pytest.approx(1.0)

    def test_disjoint_orthogonal(self):
        a = det(block(3, 0, 0), [1, 0])
        b = det(block(3, 6, 6), [0, 1])
        assert match_score(a, b, THIRD) == pytest.approx(0.5 / 3)

    def test_zero_weights(self):
        a = det(block(3, 0, 0), [1, 0])
        assert match_score(a, a, MatchScoreConfig(0, 0, 0)) == 0.0

    def test_overlap_frames_only(self):
        # prev covers frames 0..2, cur covers 2..4; only frame 2 is compared
        prev_masks = block(3, 0, 0)
        prev_masks[2] = block(1, 6, 6)[0]
        cur_masks = block(3, 0, 0)
        cur_masks[0] = block(1, 6, 6)[0]
        a = det(prev_masks, [1, 0], start=0)
        b = det(cur_masks, [1, 0], start=2)
        assert match_score(a, b, MatchScoreConfig(0, 1, 0)) == 1.0
        assert match_score(a, b, MatchScoreConfig(0, 0, 1)) == 1.0

    def test_no_overlap_uses_nearest_frames(self):
        prev_masks = block(2, 0, 0)
        prev_masks[1] = block(1, 6, 6)[0]
        a = det(prev_masks, [1, 0], start=0)
        b = det(block(2, 6, 6), [1, 0], start=2)
        assert match_score(a, b, MatchScoreConfig(0, 1, 0)) == 1.0

    def test_range(self, rng):
        for _ in range(20):
            a = det(block(2, *rng.integers(0, 9, size=2)), rng.normal(size=3))
            b = det(block(2, *rng.integers(0, 9, size=2)), rng.normal(size=3))
            assert 0.0 <= match_score(a, b, THIRD) <= 1.0 + 1e-12


class TestLink:
    def test_first_clip(self):
        dets = [det(block(2, 3 * i, 0), np.eye(3)[i], score=0.5 + 0.1 * i) for i in range(3)]
        state, ids = link_clips(TrackState(), dets, THIRD)
        assert sorted(ids) == [1, 2, 3]
        # processed by descending score: the highest score takes id 1
        assert ids == [3, 2, 1]
        assert state.num_ids == 3

    def test_identity(self):
        dets = [det(block(2, 4 * i, 4 * i), np.eye(3)[i], score=0.9 - 0.1 * i) for i in range(3)]
        state, first = link_clips(TrackState(), dets, THIRD)
        state, second = link_clips(state, dets, THIRD)
        assert second == first
        assert state.num_ids == 3

    def test_all_below_tau(self):
        a = [det(block(2, 0, 0), [1, 0, 0]), det(block(2, 4, 0), [0, 1, 0])]
        b = [det(block(2, 8, 8), [0, 0, 1]), det(block(2, 8, 4), [0, 0, 1], score=0.8)]
        cfg = MatchScoreConfig(1 / 3, 1 / 3, 1 / 3, tau=0.9)
        state, _ = link_clips(TrackState(), a, cfg)
        state, ids = link_clips(state, b, cfg)
        assert ids == [3, 4]

    def test_one_to_one(self):
        prev = [det(block(2, 0, 0), [1, 0])]
        cur = [det(block(2, 0, 0), [1, 0], score=0.9), det(block(2, 0, 0), [1, 0], score=0.8)]
        state, _ = link_clips(TrackState(), prev, THIRD)
        state, ids = link_clips(state, cur, THIRD)
        assert ids == [1, 2]

    def test_threshold_strict(self):
        a = det(block(2, 0, 0), [1, 0])
        b = det(block(2, 6, 6), [0, 1])
        cfg = MatchScoreConfig(1, 0, 0, tau=0.5)
        state, _ = link_clips(TrackState(), [a], cfg)
        _, ids = link_clips(state, [b], cfg)
        assert ids == [2]  # score equals tau, which does not match

    def test_log_and_determinism(self, rng):
        clips = []
        for c in range(4):
            clips.append([det(block(3, *rng.integers(0, 9, size=2)), rng.normal(size=4), float(rng.random()), start=2 * c, clip=c) for _ in range(3)])
        log1, log2 = [], []
        t1 = track_video(clips, THIRD, log1)
        t2 = track_video(clips, THIRD, log2)
        assert log1 == log2
        assert [(t.id, t.category_id, t.score) for t in t1] == [(t.id, t.category_id, t.score) for t in t2]
        assert len(log1) == 12
        ids = sorted({e["id"] for e in log1})
        assert ids == list(range(1, len(ids) + 1))


class TestMerge:
    def test_single_clip(self):
        d = det(block(2, 0, 0), [1, 0], score=0.7, cat=2)
        (tr,) = merge_video([([d], [1])])
        assert tr.category_id == 2 and tr.score == 0.7
        assert set(tr.masks) == {0, 1}

    def test_later_wins(self):
        a = det(block(3, 0, 0), [1, 0], score=0.8, start=0)
        b = det(block(3, 5, 5), [1, 0], score=0.6, start=2)
        (tr,) = merge_video([([a], [1]), ([b], [1])])
        np.testing.assert_array_equal(tr.masks[2], b.masks[0])
        np.testing.assert_array_equal(tr.masks[1], a.masks[1])
        assert tr.score == pytest.approx(0.7)
        assert sorted(tr.masks) == [0, 1, 2, 3, 4]

    def test_modal_category(self):
        dets = [det(block(1, 0, 0), [1, 0], score=s, cat=c, start=i) for i, (c, s) in enumerate([(1, 0.5), (2, 0.9), (1, 0.4)])]
        (tr,) = merge_video([([d], [1]) for d in dets])
        assert tr.category_id == 1

    def test_category_tie_by_mean_score(self):
        dets = [det(block(1, 0, 0), [1, 0], score=s, cat=c, start=i) for i, (c, s) in enumerate([(1, 0.5), (2, 0.9)])]
        (tr,) = merge_video([([d], [1]) for d in dets])
        assert tr.category_id == 2

    def test_config_validation(self):
        with pytest.raises(ValueError):
            MatchScoreConfig(-1, 0, 0)
        assert isinstance(Box(0, 0, 1, 1), tuple)
