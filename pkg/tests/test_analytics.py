import numpy as np
import pytest

import oracles
from builders import annotation_set, moving_square, result
from cico.analytics import coherence_stats, evaluate, interpolated_ap
from cico.netout import FormatError
from cico.primitives import st_miou


def enumerate_coherence(masks, delta):
    """Exhaustive per-frame IoU enumeration for one instance, written with plain loops."""
    L = len(masks)
    present = [bool(m.any()) for m in masks]
    boxes = []
    for m in masks:
        ys, xs = np.nonzero(m)
        boxes.append((xs.min(), ys.min(), xs.max() + 1, ys.max() + 1) if len(xs) else None)
    bvals, mvals = [], []
    for t in range(L):
        if not present[t]:
            continue
        bs, ms = [], []
        for s in (t - delta, t + delta):
            if 0 <= s < L and present[s]:
                bs.append(oracles.rect_iou(tuple(int(v) for v in boxes[t]), tuple(int(v) for v in boxes[s])))
                ms.append(oracles.pixel_iou(masks[t].tolist(), masks[s].tolist()))
        if bs:
            bvals.append(sum(bs) / len(bs))
            mvals.append(sum(ms) / len(ms))
    return bvals, mvals


class TestCoherence:
    def test_static(self):
        gt = annotation_set({1: [(1, moving_square(10, 32, 32, 8, 4, 4, 0, 0))]})
        rep = coherence_stats(gt, 4)
        assert len(rep.deltas) == 4
        for d in rep.deltas:
            assert d.pb_ge075 == 1.0 and d.pm_ge075 == 1.0
            assert d.num_box_samples == 10
            assert d.biou_hist[-1] == 10

    def test_translating_matches_enumeration(self):
        masks = moving_square(12, 48, 48, 20, 0, 3, 1, 0)
        gt = annotation_set({1: [(1, masks)]})
        rep = coherence_stats(gt, 4)
        for d in rep.deltas:
            bvals, mvals = enumerate_coherence(masks, d.delta)
            assert d.pb_ge075 == sum(v >= 0.75 for v in bvals) / len(bvals)
            assert d.pm_ge075 == sum(v >= 0.75 for v in mvals) / len(mvals)
            assert d.num_box_samples == len(bvals)
            want = [0] * 20
            for v in bvals:
                want[min(int(v * 20), 19)] += 1
            assert d.biou_hist == want

    def test_gaps_skip_samples(self):
        masks = moving_square(5, 16, 16, 4, 0, 0, 0, 0)
        masks[1] = masks[3] = False
        rep = coherence_stats(annotation_set({1: [(1, masks)]}), 1)
        # every visible frame has no visible neighbor at distance 1
        assert rep.deltas[0].num_box_samples == 0
        assert rep.deltas[0].pb_ge075 == 0.0

    def test_invariant_to_order(self):
        a = moving_square(8, 32, 32, 10, 0, 0, 2, 1)
        b = moving_square(8, 32, 32, 6, 20, 20, -1, 0)
        r1 = coherence_stats(annotation_set({1: [(1, a)], 2: [(2, b)]}), 3).to_json()
        r2 = coherence_stats(annotation_set({5: [(3, b)], 1: [(1, a)]}), 3).to_json()
        assert r1 == r2

    def test_errors(self):
        gt = annotation_set({1: [(1, moving_square(2, 8, 8, 2, 0, 0, 0, 0))]})
        with pytest.raises(ValueError):
            coherence_stats(gt, 0)
        gt.annotations.clear()
        with pytest.raises(ValueError):
            coherence_stats(gt, 1)


class TestInterpolatedAp:
    @pytest.mark.parametrize(
        "tps, npos",
        [([1], 1), ([1], 2), ([0, 1], 1), ([1, 0, 1, 1, 0], 4), ([0, 0], 3), ([1, 1, 0, 1], 3)],
    )
    def test_matches_pr_walk(self, tps, npos):
        assert interpolated_ap(np.array(tps), npos) == pytest.approx(oracles.interpolated_ap(tps, npos), abs=1e-12)

    def test_random(self, rng):
        for _ in range(30):
            tps = (rng.random(rng.integers(1, 20)) < 0.5).astype(int).tolist()
            npos = max(1, sum(tps) + int(rng.integers(0, 3)))
            assert interpolated_ap(np.array(tps), npos) == pytest.approx(oracles.interpolated_ap(tps, npos), abs=1e-12)


def two_track_video():
    a = moving_square(4, 32, 32, 8, 0, 0, 1, 0)
    b = moving_square(4, 32, 32, 8, 16, 16, 0, 1)
    return a, b, annotation_set({1: [(1, a), (1, b)]}, num_categories=2)


class TestEvaluate:
    def test_identical(self):
        a, b, gt = two_track_video()
        rep = evaluate([result(1, 1, 0.9, a), result(1, 1, 0.8, b)], gt)
        assert rep.AP == rep.AP50 == rep.AP75 == 1.0
        assert rep.AR10 == 1.0 and rep.AR1 == 0.5

    def test_no_predictions(self):
        _, _, gt = two_track_video()
        rep = evaluate([], gt)
        assert (rep.AP, rep.AP50, rep.AP75, rep.AR1, rep.AR10) == (0, 0, 0, 0, 0)

    def test_half_recall(self):
        a, b, gt = two_track_video()
        # per frame: 48 of track a's 64 pixels plus 16 outside, so st_miou 0.6
        pred = np.zeros_like(a)
        for t in range(4):
            ys, xs = np.nonzero(a[t])
            pred[t, ys.min():ys.max() + 1, xs.min():xs.min() + 6] = True
            pred[t, ys.min():ys.min() + 4, xs.max() + 1:xs.max() + 1 + 4] = True
        assert st_miou(dict(enumerate(pred)), dict(enumerate(a))) == pytest.approx(48 / 80)
        rep = evaluate([result(1, 1, 0.9, pred)], gt)
        assert rep.AP50 == pytest.approx(oracles.interpolated_ap([1], 2))
        assert rep.AP50 == pytest.approx(51 / 101)
        assert rep.AP75 == 0.0

    def test_monotone_in_threshold(self, rng):
        a, b, gt = two_track_video()
        preds = []
        for k in range(6):
            m = a if k % 2 else b
            noisy = m ^ (rng.random(m.shape) < 0.02 * k)
            preds.append(result(1, 1, float(rng.random()), noisy))
        rep = evaluate(preds, gt)
        assert rep.AP50 >= rep.AP75
        assert 0.0 <= rep.AP <= 1.0

    def test_duplicate_lower_score(self):
        a, b, gt = two_track_video()
        base = evaluate([result(1, 1, 0.9, a), result(1, 1, 0.8, b)], gt)
        dup = evaluate([result(1, 1, 0.9, a), result(1, 1, 0.8, b), result(1, 1, 0.1, a)], gt)
        assert dup.AP <= base.AP

    def test_order_independent_ties(self):
        a, b, gt = two_track_video()
        preds = [result(1, 1, 0.5, a), result(1, 1, 0.5, b), result(1, 1, 0.5, a | b)]
        r1 = evaluate(preds, gt).to_json()
        r2 = evaluate(preds[::-1], gt).to_json()
        assert r1 == r2

    def test_category_must_match(self):
        a, b, gt = two_track_video()
        rep = evaluate([result(1, 2, 0.9, a)], gt)
        assert rep.AP == 0.0

    def test_unknown_ids(self):
        a, _, gt = two_track_video()
        with pytest.raises(FormatError):
            evaluate([result(9, 1, 0.9, a)], gt)
        with pytest.raises(FormatError):
            evaluate([result(1, 7, 0.9, a)], gt)

    def test_ar_top_n_per_video(self):
        a, b, gt = two_track_video()
        # a higher-scored wrong prediction pushes the correct one out of the top 1
        wrong = np.zeros_like(a)
        wrong[:, 28:, 28:] = True
        rep = evaluate([result(1, 1, 0.95, wrong), result(1, 1, 0.9, a)], gt)
        assert rep.AR1 == 0.0
        assert rep.AR10 == 0.5
