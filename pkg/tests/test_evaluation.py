import csv
import io
import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from ovvis import rle
from ovvis.config import WorldConfig
from ovvis.errors import ContractError, ShapeError
from ovvis.evaluation import (IOU_THRESHOLDS, TrackMasks, average_precision, evaluate, ground_truth_tracks,
                              interpolated_ap, st_iou, tracks_from_result)
from ovvis.fixtures import check_fixtures, load_fixtures
from ovvis.world import generate

OUTCOMES = check_fixtures()


@pytest.mark.parametrize("outcome", OUTCOMES, ids=[f"{o.kind}-{o.name}" for o in OUTCOMES])
def test_golden_fixture(outcome):
    assert outcome.got == outcome.expected


def test_fixture_file_covers_every_kind_with_derivations():
    data = load_fixtures()
    for kind in ("st_iou", "average_precision", "id_metrics"):
        assert data[kind] and all(case["derivation"] for case in data[kind])


def test_thresholds():
    assert IOU_THRESHOLDS == (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)


class TestInterpolatedAP:
    def test_single_hit(self):
        assert interpolated_ap([1], 1) == 1

    def test_recall_points_are_inclusive(self):
        # recall exactly 1/4 after one hit: points 0.00..0.25 read 1
        assert interpolated_ap([1], 4) == Fraction(26, 101)

    def test_needs_ground_truth(self):
        with pytest.raises(ContractError):
            interpolated_ap([1], 0)


masks = hnp.arrays(np.bool_, st.just((2, 3, 3)))


@settings(max_examples=60)
@given(masks, masks)
def test_st_iou_is_symmetric_and_bounded(a, b):
    v = st_iou(a, b)
    assert v == st_iou(b, a) and 0.0 <= v <= 1.0


def test_st_iou_shape_mismatch():
    with pytest.raises(ShapeError):
        st_iou(np.zeros((1, 2, 2)), np.zeros((2, 2, 2)))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.01, 0.99), min_size=1, max_size=6, unique=True), st.integers(0, 10 ** 6))
def test_ap_invariant_under_monotone_rescoring(scores, seed):
    rng = np.random.default_rng(seed)
    gts = [TrackMasks(0, i, 0, rng.random((2, 3, 3)) < 0.5) for i in range(3)]
    preds = [TrackMasks(0, i, 0, rng.random((2, 3, 3)) < 0.5, s) for i, s in enumerate(scores)]
    warped = [TrackMasks(p.video_id, p.track_id, 0, p.masks, float(np.exp(5 * p.confidence) - 7))
              for p in preds]
    assert average_precision(preds, gts, exact=True) == average_precision(warped, gts, exact=True)


def stack(*frames):
    return np.array([[list(map(int, f))] for f in frames], dtype=bool)


class TestEvaluate:
    def setup_method(self):
        self.gts = [TrackMasks(0, 0, 0, stack("1100", "1100")), TrackMasks(0, 1, 1, stack("0011", "0011")),
                    TrackMasks(1, 0, 2, stack("1110", "0000"))]
        self.flags = [False, False, True]

    def test_perfect_predictions_score_one(self):
        preds = [TrackMasks(g.video_id, g.track_id, g.category, g.masks, 0.9) for g in self.gts]
        rep = evaluate(preds, self.gts, self.flags)
        assert (rep.mAP, rep.mAP_b, rep.mAP_n) == (1.0, 1.0, 1.0)
        assert (rep.id_switches, rep.id_consistency) == (0, 1.0)

    def test_no_predictions_score_zero(self):
        rep = evaluate([], self.gts, self.flags)
        assert (rep.mAP, rep.mAP_b, rep.mAP_n) == (0.0, 0.0, 0.0)
        assert rep.id_consistency == 0.0

    def test_split_means_reconstruct_overall(self):
        preds = [TrackMasks(0, 5, 0, stack("1000", "1100"), 0.8), TrackMasks(1, 0, 2, stack("1110", "0000"), 0.3),
                 TrackMasks(0, 6, 1, stack("0011", "0000"), 0.6)]
        rep = evaluate(preds, self.gts, self.flags)
        nb, nn = 2, 1
        assert rep.mAP == pytest.approx((nb * rep.mAP_b + nn * rep.mAP_n) / (nb + nn), abs=1e-15)

    def test_absent_split_is_none(self):
        rep = evaluate([], self.gts[:2], self.flags)
        assert rep.mAP_n is None and rep.mAP == 0.0
        assert json.loads(rep.dumps())["mAP_n"] is None

    def test_category_out_of_range(self):
        with pytest.raises(ContractError):
            evaluate([TrackMasks(0, 0, 9, stack("1000"))], self.gts, self.flags)

    def test_exports(self):
        rep = evaluate([], self.gts, self.flags, ["a", "b", "c"], {"seed": 1})
        doc = json.loads(rep.dumps())
        assert set(doc) == {"mAP", "mAP_b", "mAP_n", "per_category", "id_switches", "id_consistency",
                            "num_videos", "config"}
        assert doc["config"] == {"seed": 1} and doc["num_videos"] == 2
        rows = list(csv.DictReader(io.StringIO(rep.to_csv())))
        assert [r["split"] for r in rows] == ["base", "base", "novel"]
        assert rows[2]["name"] == "c" and rows[2]["num_gt"] == "1"


def test_result_documents_decode_with_empty_missing_frames():
    doc = {"video_id": 3, "num_frames": 3, "mask_size": [1, 4], "scheme": "online", "clip_len": 1, "config": {},
           "tracks": [{"id": 0, "category": 1, "confidence": 0.5,
                       "frames": [{"frame_idx": 1, "rle": rle.encode(np.array([[0, 1, 1, 0]]))}]}]}
    (t,) = tracks_from_result(doc)
    assert t.video_id == 3 and t.category == 1 and t.confidence == 0.5
    np.testing.assert_array_equal(t.masks.sum(axis=(1, 2)), [0, 2, 0])


def test_ground_truth_tracks_follow_the_video():
    w = generate(WorldConfig(min_instances=2, max_instances=2, num_train_videos=1, num_eval_videos=1))
    v = w.eval_videos[0]
    g = ground_truth_tracks(v, 4)
    assert [t.category for t in g] == v.class_ids.tolist()
    assert g[0].masks.shape == (v.num_frames, 8, 8)
