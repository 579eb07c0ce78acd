import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import (
    block,
    gt_file,
    normalise,
    preds,
    reference_eval,
    seg,
    small_instance,
)

from masktrack.evaluation import EvalError, evaluate, track_iou


class TestTrackIou:
    def test_identity(self):
        ms = [block(0, 2, 0, 2), block(1, 3, 1, 3)]
        s = [seg(m) for m in ms]
        assert track_iou(s, s) == 1.0

    def test_half_frames(self):
        g = [seg(block(0, 2, 0, 2))] * 4
        p = [seg(block(0, 2, 0, 2)), None, seg(block(0, 2, 0, 2)), None]
        assert track_iou(p, g) == 0.5

    def test_disjoint(self):
        assert track_iou([seg(block(0, 1, 0, 1))], [seg(block(3, 4, 3, 4))]) == 0.0


class TestEvaluate:
    def test_perfect(self):
        gt = [{"id": 1, "video_id": 1, "cat": 1, "masks": [block(0, 2, 0, 2), block(0, 2, 1, 3)]},
              {"id": 2, "video_id": 1, "cat": 2, "masks": [None, block(4, 6, 4, 6)]}]
        r = evaluate(preds([{**t, "score": 1.0} for t in gt]), gt_file(gt))
        assert (r.mAP, r.AP50, r.AP75, r.AR1, r.AR10) == (1.0, 1.0, 1.0, 1.0, 1.0)

    def test_single_prediction_iou_06(self):
        g = block(0, 2, 0, 5)  # 10 px
        p = block(0, 2, 0, 3)  # 6 px inside: IoU 0.6
        gt = [{"id": 1, "video_id": 1, "cat": 1, "masks": [g]}]
        r = evaluate(preds([{"id": 1, "video_id": 1, "cat": 1, "score": 0.9, "masks": [p]}]), gt_file(gt, cats=(1,)))
        assert r.per_class[1] == 0.3
        assert r.mAP == 0.3 and r.AP50 == 1.0 and r.AP75 == 0.0

    def test_empty_predictions(self):
        gt = [{"id": 1, "video_id": 1, "cat": 1, "masks": [block(0, 2, 0, 2)]}]
        r = evaluate([], gt_file(gt))
        assert (r.mAP, r.AR1, r.AR10) == (0.0, 0.0, 0.0)

    def test_errors(self):
        gt = [{"id": 1, "video_id": 1, "cat": 1, "masks": [block(0, 2, 0, 2)]}]
        bad = preds([{"id": 1, "video_id": 1, "cat": 9, "score": 0.5, "masks": [block(0, 1, 0, 1)]}])
        with pytest.raises(EvalError):
            evaluate(bad, gt_file(gt))
        dup = preds([{"id": 1, "video_id": 1, "cat": 1, "score": 0.5, "masks": [block(0, 1, 0, 1)]}] * 2)
        with pytest.raises(EvalError):
            evaluate(dup, gt_file(gt))
        with pytest.raises(EvalError):
            evaluate([], gt_file(gt + gt))

    def test_classes_without_gt_excluded(self):
        gt = [{"id": 1, "video_id": 1, "cat": 1, "masks": [block(0, 2, 0, 2)]}]
        r = evaluate(preds([{**gt[0], "score": 1.0}]), gt_file(gt, cats=(1, 2, 3)))
        assert r.mAP == 1.0 and list(r.per_class) == [1]

    def test_table(self):
        gt = [{"id": 1, "video_id": 1, "cat": 1, "masks": [block(0, 2, 0, 2)]}]
        r = evaluate(preds([{**gt[0], "score": 1.0}]), gt_file(gt))
        text = r.table({1: "person"})
        assert "mAP" in text and "AR10" in text and "person" in text


@settings(max_examples=300, deadline=None)
@given(small_instance())
def test_matches_exhaustive_reference(inst):
    dts, gts, n = inst
    dts, gts = normalise(dts, n), normalise(gts, n)
    ref = reference_eval(dts, gts)
    got = evaluate(preds(dts), gt_file(gts, lengths={1: n, 2: n}))
    assert got.mAP == ref["mAP"]
    assert got.AP50 == ref["AP50"] and got.AP75 == ref["AP75"]
    assert got.AR1 == ref["AR1"] and got.AR10 == ref["AR10"]
    assert got.per_class == ref["per_class"]


@settings(max_examples=100, deadline=None)
@given(small_instance(), st.randoms())
def test_order_invariance_and_bounds(inst, rnd):
    dts, gts, n = inst
    dts, gts = normalise(dts, n), normalise(gts, n)
    gtf = gt_file(gts, lengths={1: n, 2: n})
    a = evaluate(preds(dts), gtf)
    shuffled = list(dts)
    rnd.shuffle(shuffled)
    assert evaluate(preds(shuffled), gtf) == a
    assert a.AP50 >= a.mAP
    for v in (a.mAP, a.AP50, a.AP75, a.AR1, a.AR10):
        assert 0.0 <= v <= 1.0


@settings(max_examples=100, deadline=None)
@given(small_instance())
def test_duplicate_never_helps(inst):
    dts, gts, n = inst
    dts, gts = normalise(dts, n), normalise(gts, n)
    if not dts:
        return
    gtf = gt_file(gts, lengths={1: n, 2: n})
    base = evaluate(preds(dts), gtf)
    top = max(dts, key=lambda d: d["score"])
    dup = {**top, "id": 99, "score": top["score"] / 2}
    more = evaluate(preds(dts + [dup]), gtf)
    for c in base.per_class:
        assert more.per_class[c] <= base.per_class[c]
