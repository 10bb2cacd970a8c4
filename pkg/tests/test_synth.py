import numpy as np
import pytest

from cico.formats import EngineConfig
from cico.inference import run_clip
from cico.pipeline import infer_container
from cico.netout import NetOutContainer
from cico.primitives import circumscribed_box, st_miou
from cico.synth import SynthParams, synth_generate, write_synth


@pytest.fixture(scope="module")
def data():
    return synth_generate(SynthParams(videos=3, frames=10, shapes=3, seed=11))


def test_counts(data):
    assert len(data.annotations.videos) == 3
    for vid, anns in data.annotations.by_video().items():
        assert len(anns) == 3
        assert len({a.category_id for a in anns}) == 3


def test_deterministic(tmp_path):
    p = SynthParams(videos=2, frames=6, seed=5)
    a = write_synth(synth_generate(p), tmp_path / "a")
    b = write_synth(synth_generate(p), tmp_path / "b")
    for key in a:
        assert a[key].read_bytes() == b[key].read_bytes()
    c = write_synth(synth_generate(SynthParams(videos=2, frames=6, seed=6)), tmp_path / "c")
    assert a["annotations"].read_bytes() != c["annotations"].read_bytes()


def test_cbox_consistency(data):
    for clip in data.clips:
        for boxes in clip.boxes:
            cb = circumscribed_box(boxes)
            assert cb.x1 == boxes[:, 0].min() and cb.y2 == boxes[:, 3].max()
    for a in data.annotations.annotations:
        track = a.box_track()
        cb = circumscribed_box(track)
        assert all(cb.x1 <= b.x1 and cb.x2 >= b.x2 and cb.y1 <= b.y1 and cb.y2 >= b.y2 for b in track.values())


def test_masks_match_annotations(data):
    for a in data.annotations.annotations:
        for t, m in a.mask_track().items():
            np.testing.assert_array_equal(m, data.masks[a.id][t])


def test_oracle_prototypes(data):
    clip = data.clips[0]
    assert set(np.unique(clip.prototypes)) <= {-10.0, 10.0}
    assert np.allclose(clip.scores.max(axis=1), 0.99)


def test_oracle_recovery_per_clip(data):
    cfg = data.config.inference()
    for clip in data.clips:
        for det in run_clip(clip, cfg):
            j = int(np.argmax(clip.mask_params[det.anchor_index]))
            ann = data.annotations.by_video()[clip.video_id][j]
            gt = {k: data.masks[ann.id][t] for k, t in enumerate(clip.frames)}
            assert st_miou(dict(enumerate(det.masks)), gt) >= 0.99


def test_oracle_tracks(data):
    results = infer_container(NetOutContainer(data.clips, {}), data.config)
    by_video = data.annotations.by_video()
    for r in results:
        best = max(st_miou(r.mask_track(), a.mask_track()) for a in by_video[r.video_id])
        assert best >= 0.99
    assert len(results) == 9


def test_validation():
    for kw in ({"shapes": 0}, {"frames": 0}, {"height": 30}, {"size_range": (10, 500)}, {"T": 2, "T_o": 2}):
        with pytest.raises(ValueError):
            synth_generate(SynthParams(**kw))


def test_config(data):
    assert isinstance(data.config, EngineConfig)
    assert data.config.k == 3 and data.config.T == 3
