import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ap_from_ranked, best_assignment_ap, iou_sets
from streamloc.data import Interval
from streamloc.evaluation import (
    UndefinedClassError,
    average_precision,
    class_aps,
    evaluation_table,
    format_table,
    iou,
    map_at,
    match_detections,
    per_frame_map,
)
from streamloc.events import DetectionEvent
from streamloc.exceptions import ArgumentError


def ev(s, e, conf=1.0, k=0):
    return DetectionEvent(k, s, e, conf)


def test_iou_hand_cases():
    assert iou((0, 10), (5, 15)) == 5 / 15
    assert iou((0, 10), (0, 10)) == 1.0
    assert iou((0, 10), (10, 20)) == 0.0
    assert iou(ev(0, 4), Interval(2, 6)) == 2 / 6
    with pytest.raises(ArgumentError):
        iou((3, 3), (0, 5))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 30), st.integers(1, 20), st.integers(0, 30), st.integers(1, 20))
def test_iou_matches_frame_sets(a, la, b, lb):
    x, y = (a, a + la), (b, b + lb)
    assert iou(x, y) == pytest.approx(iou_sets(x, y), abs=1e-15)
    assert iou(x, y) == iou(y, x)
    assert (iou(x, y) == 1.0) == (x == y)


def test_match_cases():
    gt = [Interval(10, 20, 0)]
    r = match_detections([ev(10, 20)], gt, 1.0)
    assert (r.tp, r.fp) == (1, 0)
    r = match_detections([ev(10, 20, 0.9), ev(11, 20, 0.8)], gt, 0.5)
    assert (r.tp, r.fp) == (1, 1)
    assert r.flags[0] == [True, False]
    # IoU 4/10
    r = match_detections([ev(10, 14)], gt, 0.5)
    assert (r.tp, r.fp) == (0, 1)
    r = match_detections([ev(10, 14)], gt, 0.3)
    assert (r.tp, r.fp) == (1, 0)


def test_match_never_crosses_class_or_stream():
    gts = {"a": [Interval(0, 10, 0)], "b": [Interval(0, 10, 1)]}
    events = {"a": [ev(0, 10, k=1)], "b": [ev(0, 10, k=1)]}
    r = match_detections(events, gts, 0.5)
    assert r.flags[1] == [False, True]
    assert r.num_gt == {0: 1, 1: 1}


def test_match_reassigns_to_keep_higher_confidence_prefix():
    # the top event prefers gt0 (IoU 0.9) but can also take gt1; the second event
    # can only take gt0. Both should be true positives.
    gts = [Interval(0, 10), Interval(4, 14)]
    top = ev(0, 9, 0.9)        # IoU 0.9 with gt0, 5/14 with gt1
    second = ev(0, 8, 0.5)     # IoU 0.8 with gt0, 4/14 with gt1
    r = match_detections([top, second], gts, 0.35)
    assert r.flags[0] == [True, True]
    assert r.matched_gt == {("", 0), ("", 1)}


def test_ap_hand_cases():
    assert average_precision([True, True], [0.9, 0.8], 2) == 1.0
    assert average_precision([False], [0.9], 1) == 0.0
    assert average_precision([True, False, True], [0.9, 0.8, 0.7], 2) == pytest.approx(0.5 + 0.5 * 2 / 3)
    assert average_precision([], [], 3) == 0.0
    with pytest.raises(UndefinedClassError):
        average_precision([True], [1.0], 0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.floats(0.01, 1.0)), max_size=8), st.integers(1, 5))
def test_ap_matches_recall_integration(dets, extra_gt):
    flags = [f for f, _ in dets]
    conf = [c for _, c in dets]
    n_gt = sum(flags) + extra_gt
    order = sorted(range(len(dets)), key=lambda i: -conf[i])
    ref = ap_from_ranked([flags[i] for i in order], n_gt)
    ap = average_precision(flags, conf, n_gt)
    assert ap == pytest.approx(ref, abs=1e-12)
    assert 0.0 <= ap <= 1.0
    # a new lowest-confidence false positive never helps
    assert average_precision(flags + [False], conf + [0.0], n_gt) <= ap + 1e-15
    # rank invariance under positive scaling
    assert average_precision(flags, [3.0 * c for c in conf], n_gt) == pytest.approx(ap, abs=1e-15)


def random_instance(rng):
    n_gt = int(rng.integers(1, 4))
    gts, t = [], 0
    for _ in range(n_gt):
        t += int(rng.integers(0, 10))
        length = int(rng.integers(4, 20))
        gts.append((t, t + length))
        t += length
    spans, conf = [], []
    for _ in range(int(rng.integers(0, 7))):
        g = gts[int(rng.integers(n_gt))]
        s = max(0, g[0] + int(rng.integers(-6, 7)))
        e = max(s + 1, g[1] + int(rng.integers(-6, 7)))
        spans.append((s, e))
        conf.append(float(rng.choice([0.2, 0.5, 0.8, rng.random()])))
    return gts, spans, conf


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([0.1, 0.3, 0.5, 0.7]))
def test_ap_equals_exhaustive_oracle(seed, theta):
    gts, spans, conf = random_instance(np.random.default_rng(seed))
    events = [ev(s, e, c) for (s, e), c in zip(spans, conf)]
    gt_iv = [Interval(s, e) for s, e in gts]
    ap = class_aps(events, gt_iv, theta)[0]
    assert ap == pytest.approx(best_assignment_ap(spans, conf, gts, theta), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31))
def test_map_non_increasing_in_theta(seed):
    rng = np.random.default_rng(seed)
    gts, spans, conf = random_instance(rng)
    events = [ev(s, e, c, k=int(rng.integers(2))) for (s, e), c in zip(spans, conf)]
    gt_iv = [Interval(s, e, int(rng.integers(2))) for s, e in gts]
    maps = list(map_at(events, gt_iv, np.linspace(0.05, 1.0, 20)).values())
    assert all(a >= b - 1e-12 for a, b in zip(maps, maps[1:]))


def test_map_perfect_and_errors():
    gts = [Interval(0, 10, 0), Interval(20, 30, 1)]
    events = [ev(0, 10, 0.9, 0), ev(20, 30, 0.8, 1)]
    assert set(map_at(events, gts).values()) == {1.0}
    with pytest.raises(ArgumentError):
        map_at(events, [])
    # a class with no GT is excluded, not scored zero
    assert map_at(events + [ev(40, 50, 0.7, 2)], gts, (0.5,), num_classes=3) == {0.5: 1.0}


def test_default_thresholds():
    gts = [Interval(0, 10, 0)]
    assert list(map_at([ev(0, 10)], gts)) == [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.75, 0.95]


def test_evaluation_table_and_format():
    table = evaluation_table([ev(0, 10, 0.9, 0)], [Interval(0, 10, 0), Interval(20, 30, 1)], (0.5,),
                             ["a", "b"])
    assert table["per_class"] == {"a": {"0.5": 1.0}, "b": {"0.5": 0.0}}
    assert table["mAP"] == {"0.5": 0.5}
    assert "mAP" in format_table(table)


def test_per_frame_map_cases():
    gts = [Interval(2, 5, 0), Interval(6, 9, 1)]
    onehot = np.zeros((10, 3))
    onehot[2:5, 0] = 1
    onehot[6:9, 1] = 1
    onehot[[0, 1, 5, 9], 2] = 1
    assert per_frame_map(onehot, gts, 2) == 1.0
    background = np.zeros((10, 3))
    background[:, 2] = 1
    assert per_frame_map(background, gts, 2) == 0.0


def test_per_frame_uniform_scores_tie_order():
    # 10 frames, positives at 3, 4, 5; equal scores rank frames 0..9 by index.
    # precisions at the hits: 1/4, 2/5, 3/6; envelope is 1/2 at every recall step
    scores = np.full((10, 1), 0.5)
    assert per_frame_map(scores, [Interval(3, 6, 0)]) == pytest.approx(0.5)
    assert per_frame_map(scores, [Interval(0, 3, 0)]) == pytest.approx(1.0)


def test_per_frame_rank_invariance():
    rng = np.random.default_rng(0)
    scores = rng.random((30, 3))
    gts = {"x": [Interval(4, 12, 0), Interval(15, 25, 1)]}
    assert per_frame_map({"x": 2.0 * scores}, gts, 2) == pytest.approx(per_frame_map({"x": scores}, gts, 2))
