import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FEAT, FRAME, small_streams, tiny_networks
from streamloc.data import AnnotatedStream, Interval, static_stream
from streamloc.exceptions import ConfigError, DataError, StateError
from streamloc.networks import C3DConfig, Detector, DetectorConfig, F2GConfig
from streamloc.pipeline import PipelineConfig
from streamloc.tensor import Tensor
from streamloc.training import (
    Corpus,
    DetSchedule,
    F2GSchedule,
    FeatureBank,
    PhaseSchedule,
    StreamFeatures,
    TrainLog,
    ar_window_set,
    build_feature_bank,
    class_weights,
    copy_last_loss,
    detector_batch_loss,
    detector_class_weights,
    frame_loss,
    pr_window_set,
    train_det,
    train_f2g,
    train_pr,
)

CLASSES = ("expand_contract", "sweep_left_right", "brighten_dim")


def test_class_weights_hand_case():
    assert class_weights((100, 50)).tolist() == [0.5, 0.75]
    assert class_weights([0, 10, 10]).tolist() == [1.0, 0.5, 0.5]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 10_000), min_size=1, max_size=8).filter(lambda c: max(c) > 0))
def test_class_weights_majority_is_half(counts):
    w = class_weights(counts)
    assert w[int(np.argmax(counts))] == 0.5
    assert np.all((w >= 0.5) & (w <= 1.0))
    # rarer classes never weigh less
    order = np.argsort(counts)
    assert np.all(np.diff(w[order]) <= 0)


def test_class_weights_errors():
    with pytest.raises(ValueError):
        class_weights([0, 0])
    with pytest.raises(ValueError):
        class_weights([])


def test_window_sets():
    s = AnnotatedStream(np.zeros((64, 1, 4, 4), np.float32), [Interval(16, 48, 1)], [32], "a")
    pr = pr_window_set([s])
    assert pr.labels.tolist() == [0, 1, 1, 0]
    ar = ar_window_set([s], 2, check=False)
    assert ar.labels.tolist() == [2, 3]
    assert ar.windows([0, 1]).shape == (2, 16, 1, 4, 4)
    with pytest.raises(DataError, match="'c0' has no beginning windows"):
        s.classes = ("c0", "c1")
        ar_window_set([s], 2)


def test_corpus_rejects_shared_ids():
    s = static_stream(20)
    with pytest.raises(DataError, match="share stream ids"):
        Corpus([s], [s], CLASSES)


def test_schedule_validation():
    with pytest.raises(ConfigError):
        PhaseSchedule(optimizer="adam")
    with pytest.raises(ConfigError):
        PhaseSchedule(epochs=0)


def test_train_log_jsonl(tmp_path):
    log = TrainLog(tmp_path / "x.jsonl")
    log.add("pr", 1, 10, 0.5, 0.9, 3)
    log.add("f2g", 0, 0, None, 0.1, 3)
    lines = [json.loads(x) for x in (tmp_path / "x.jsonl").read_text().splitlines()]
    assert lines[0] == {"phase": "pr", "epoch": 1, "step": 10, "loss": 0.5, "val_metric": 0.9, "seed": 3}
    assert lines[1]["loss"] is None


def _corpus(n_train=4, n_val=2):
    return Corpus(small_streams(n_train, 0, "t"), small_streams(n_val, 1, "v"), CLASSES)


def test_classifier_initial_loss_and_selection(tmp_path):
    cfg = C3DConfig(frame_size=FRAME, widths=(2, 2, 4, 4, 4, 4, 4, 4), feature_dim=FEAT)
    sched = PhaseSchedule(lr=1e-3, epochs=2, batch_size=8, samples_per_epoch=16)
    res = train_pr(_corpus(), sched, cfg, train_log=TrainLog(tmp_path / "pr.jsonl"))
    first = res.log.records[0]["first_loss"]
    # untrained two-way classifier starts near log 2
    assert abs(first - np.log(2)) < 0.3
    assert res.network.trained
    assert res.best_val == max(r["val_metric"] for r in res.log.records)
    again = train_pr(_corpus(), sched, cfg)
    assert again.network.checksum() == res.network.checksum()


def test_f2g_frame_loss_hand_value():
    pred = np.zeros((1, 1, 2, 2))
    target = np.array([[[[0.0, 1.0], [0.0, 0.0]]]])
    # l2 = 1/4; |dy| of target: [0,1] -> mean sq diff 1/2; |dx|: [1,0] -> 1/2
    assert frame_loss(Tensor(pred), target).item() == pytest.approx(0.25 + 0.5 + 0.5)
    assert frame_loss(Tensor(target), target).item() == 0.0


def test_copy_last_loss_zero_on_static():
    ctx = np.full((2, 16, 1, 4, 4), 0.3)
    assert copy_last_loss(ctx, np.full((2, 8, 1, 4, 4), 0.3)) == 0.0


def test_f2g_rejects_short_streams():
    corpus = Corpus([static_stream(20, frame_size=FRAME)], [], CLASSES)
    with pytest.raises(DataError, match="at least 24 frames"):
        train_f2g(corpus, F2GSchedule(iterations=1), F2GConfig(frame_size=FRAME))


def test_f2g_training_reports_baseline():
    cfg = F2GConfig(frame_size=FRAME, content_widths=(2, 4), motion_widths=(2, 4), lstm_width=4,
                    decoder_widths=(4,), refine_width=2)
    res = train_f2g(_corpus(2, 1), F2GSchedule(lr=1e-2, iterations=4, batch_size=2, val_every=2, val_pairs=4), cfg)
    assert res.network.trained
    # the zero-initialized head starts at copy-last, and only improvements are kept
    assert res.best_val <= res.extras["copy_last_val"] + 1e-9
    assert res.log.records[0]["val_metric"] == pytest.approx(res.extras["copy_last_val"], rel=1e-5)


def _features(n_windows, k=3, seed=0, sid="s"):
    rng = np.random.default_rng(seed)
    return StreamFeatures(sid, rng.standard_normal((n_windows, 4 * FEAT)).astype(np.float32),
                          rng.integers(0, k + 1, n_windows), np.arange(n_windows) * 16 + 15)


def test_bptt_sequence_packing():
    # a 300-frame stream at stride 16 gives 18 windows, i.e. two full 8-window sequences
    s = static_stream(300, frame_size=FRAME)
    bank = build_feature_bank([s], tiny_networks(), PipelineConfig(), 16, real_only=True)
    sf = bank.stream_features(False, False)[0]
    assert len(sf.labels) == 18 and sf.sequences() == 2
    det = Detector(DetectorConfig(feature_dim=FEAT, num_classes=3, lstm_width=4))
    w = np.ones(4, np.float32)
    assert len(detector_batch_loss(det, [sf], w, "eval", None)) == 2
    # in a batch, shorter streams stop contributing after their last chunk
    batch = [_features(18), _features(8, seed=1), _features(30, seed=2)]
    assert len(detector_batch_loss(det, batch, w, "eval", None)) == 3


def test_bptt_carries_state_across_chunks():
    det = Detector(DetectorConfig(feature_dim=FEAT, num_classes=3, lstm_width=4, dropout_p=0.0))
    w = np.ones(4, np.float32)
    sf = _features(16)
    second_chunk = StreamFeatures("x", sf.features[8:], sf.labels[8:], sf.times[8:])
    carried = detector_batch_loss(det, [sf], w, "eval", None)[1]
    fresh = detector_batch_loss(det, [second_chunk], w, "eval", None)[0]
    assert carried != pytest.approx(fresh, abs=1e-9)


def test_detector_class_weights_from_window_counts():
    a = StreamFeatures("a", np.zeros((4, 4)), np.array([3, 3, 3, 0]), np.arange(4))
    b = StreamFeatures("b", np.zeros((2, 4)), np.array([3, 1]), np.arange(2))
    # counts (1, 1, 0, 4)
    assert detector_class_weights([a, b], 3).tolist() == [0.875, 0.875, 1.0, 0.5]


def test_feature_bank_roundtrip_and_reuse(tmp_path):
    nets = tiny_networks()
    streams = small_streams(2, 5)
    bank = build_feature_bank(streams, nets, PipelineConfig(), 8)
    bank.save(tmp_path / "b.npz")
    back = FeatureBank.load(tmp_path / "b.npz")
    for a, b in zip(bank.stream_features(True, True), back.stream_features(True, True)):
        assert a.stream_id == b.stream_id
        assert a.features.tobytes() == b.features.tobytes() and np.array_equal(a.labels, b.labels)
    gt = build_feature_bank(streams, nets, PipelineConfig(use_f2g=False, oracle_future=True), 8, real_from=bank)
    assert gt.real[0] is bank.real[0]
    assert not np.array_equal(gt.future[0].pr_feat, bank.future[0].pr_feat)
    real_only = build_feature_bank(streams, nets, PipelineConfig(), 8, real_only=True)
    with pytest.raises(StateError):
        real_only.stream_features(True, False)


def test_train_det_freezes_upstream_and_is_deterministic():
    nets = tiny_networks()
    train = [_features(16, seed=i, sid=f"t{i}") for i in range(3)]
    val = [_features(9, seed=9, sid="v")]
    cfg = DetectorConfig(feature_dim=FEAT, num_classes=3, lstm_width=4)
    sched = DetSchedule(lr=1e-3, cycles=2, epochs_per_cycle=1, batch_size=2)
    upstream = {"pr": nets.pr, "ar": nets.ar, "f2g": nets.f2g}
    before = {k: v.checksum() for k, v in upstream.items()}
    a = train_det(train, val, 3, sched, cfg, upstream)
    b = train_det(train, val, 3, sched, cfg, upstream)
    assert a.network.checksum() == b.network.checksum()
    assert a.extras["upstream_checksums"] == before
    assert a.network.trained and len(a.log.records) == 2
    assert a.log.records[-1]["cycle"] == 2


def test_train_det_errors():
    cfg = DetectorConfig(feature_dim=FEAT, num_classes=3, lstm_width=4)
    with pytest.raises(StateError, match="trained pr"):
        train_det([_features(16)], [], 3, DetSchedule(), cfg, {"pr": tiny_networks(trained=False).pr})
    with pytest.raises(DataError, match="full 8-window"):
        train_det([_features(7)], [], 3, DetSchedule(), cfg)
    with pytest.raises(ConfigError):
        train_det([_features(16)], [], 3, DetSchedule(), DetectorConfig(feature_dim=4, num_classes=3))
