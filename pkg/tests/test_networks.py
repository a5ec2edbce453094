import numpy as np
import pytest

from conftest import tiny_networks
from streamloc.exceptions import ArgumentError, CheckpointError, DimensionError, LabelError, ParseError
from streamloc.gradchecks import TOLERANCE, network_checks
from streamloc.networks import (
    C3D,
    F2G,
    FEATURE_ORDER,
    C3DConfig,
    Detector,
    DetectorConfig,
    F2GConfig,
    LabelSpace,
    ar_network,
    concat_features,
    load_checkpoint,
    pr_network,
    read_checkpoint,
    save_checkpoint,
)


def test_c3d_layer_layout():
    net = C3D(C3DConfig())
    shapes = net.layer_shapes()
    convs = [n for n in shapes if n.startswith("conv") and n.endswith(".weight")]
    assert len(convs) == 8
    assert all(shapes[n][2:] == (3, 3, 3) for n in convs)
    # five pools: 16x32x32 -> 1x1x1
    assert len(net.config.pool_schedule()) == 5
    assert net.config.pooled_extent() == (1, 1, 1)
    assert shapes["fc7.weight"] == (128, 128)


def test_c3d_forward_shapes():
    net = C3D(C3DConfig(widths=(2,) * 8, feature_dim=16, out_dim=4))
    logits, fc7 = net.batch_forward(np.random.default_rng(0).random((3, 16, 1, 32, 32)))
    assert logits.shape == (3, 4) and fc7.shape == (3, 16)
    assert np.all(fc7 >= 0)


def test_c3d_rejects_wrong_clip_length():
    net = C3D(C3DConfig(widths=(2,) * 8, feature_dim=4))
    with pytest.raises(DimensionError, match="axis T"):
        net.segment_forward(np.zeros((15, 1, 32, 32)))


def test_full_scale_dims():
    cfg = C3DConfig.full_scale(out_dim=2)
    assert cfg.feature_dim == 4096 and cfg.frame_size == (112, 112) and cfg.in_channels == 3
    assert DetectorConfig(feature_dim=4096).input_dim == 4 * 4096 == 16384


def test_pr_ar_output_sizes():
    assert pr_network(C3DConfig(widths=(2,) * 8, feature_dim=4)).config.out_dim == 2
    assert ar_network(3, C3DConfig(widths=(2,) * 8, feature_dim=4, out_dim=6)).config.out_dim == 6
    with pytest.raises(ArgumentError):
        ar_network(3, C3DConfig(out_dim=4))


def test_label_space():
    ls = LabelSpace()
    assert (ls.K, ls.pr_size, ls.ar_size, ls.det_size, ls.background) == (3, 2, 6, 4, 3)
    assert ls.ar_label(2, "finishing") == 5
    assert LabelSpace.ar_decode(5) == (2, 1)
    with pytest.raises(LabelError):
        ls.ar_label(3, 0)


def test_fresh_f2g_copies_last_frame():
    net = F2G(F2GConfig(frame_size=(16, 16), content_widths=(2, 2), motion_widths=(2, 2), lstm_width=2,
                        decoder_widths=(2,), refine_width=2))
    ctx = np.random.default_rng(0).uniform(0.1, 0.9, (16, 1, 16, 16)).astype(np.float32)
    out = net.generate(ctx)
    assert out.shape == (8, 1, 16, 16)
    assert np.array_equal(out, np.repeat(ctx[-1:], 8, axis=0))


def test_f2g_output_in_unit_range():
    nets = tiny_networks()
    ctx = np.random.default_rng(1).uniform(0, 1, (2, 16, 1, 16, 16))
    out = nets.f2g.batch_generate(ctx)
    assert out.shape == (2, 8, 1, 16, 16)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_f2g_rejects_short_context():
    nets = tiny_networks()
    with pytest.raises(DimensionError, match="axis T"):
        nets.f2g.generate(np.zeros((12, 1, 16, 16)))


def test_detector_step_and_width_error():
    det = Detector(DetectorConfig(feature_dim=4, num_classes=2, lstm_width=6))
    logits, state = det.forward_step(np.zeros(16))
    assert logits.shape == (3,) and len(state) == 2
    with pytest.raises(DimensionError, match="4F = 16"):
        det.forward_step(np.zeros(12))


def test_feature_order():
    assert FEATURE_ORDER == ("pr_real", "pr_future", "ar_real", "ar_future")
    parts = [np.full(2, i) for i in range(4)]
    assert concat_features(*parts).tolist() == [0, 0, 1, 1, 2, 2, 3, 3]


def test_network_gradchecks():
    reports = network_checks(seed=0, max_entries=6)
    failing = {k: r.max_error for k, r in reports.items() if not r.passed(TOLERANCE)}
    assert not failing


@pytest.mark.parametrize("which", ["pr", "ar", "detector", "f2g"])
def test_checkpoint_roundtrip_bit_exact(tmp_path, which):
    src = getattr(tiny_networks(seed=1), which)
    path = save_checkpoint(src, tmp_path / "net.slck")
    dst = getattr(tiny_networks(seed=7, trained=False), which)
    load_checkpoint(path, dst)
    assert dst.trained
    for name, p in src.named_parameters().items():
        assert p.data.tobytes() == dst[name].data.tobytes()
    assert dst.checksum() == src.checksum()
    save_checkpoint(dst, tmp_path / "again.slck")
    assert (tmp_path / "again.slck").read_bytes() == path.read_bytes()


def test_checkpoint_config_mismatch(tmp_path):
    a = Detector(DetectorConfig(feature_dim=4, lstm_width=4))
    b = Detector(DetectorConfig(feature_dim=4, lstm_width=6))
    save_checkpoint(a, tmp_path / "a.slck")
    with pytest.raises(CheckpointError, match="config hash"):
        load_checkpoint(tmp_path / "a.slck", b)
    assert not b.trained


def test_checkpoint_truncated_and_bad_magic(tmp_path):
    det = Detector(DetectorConfig(feature_dim=4, lstm_width=4))
    path = save_checkpoint(det, tmp_path / "d.slck")
    raw = path.read_bytes()
    (tmp_path / "cut.slck").write_bytes(raw[:-3])
    with pytest.raises(ParseError, match="truncated"):
        read_checkpoint(tmp_path / "cut.slck")
    (tmp_path / "bad.slck").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ParseError, match="magic"):
        read_checkpoint(tmp_path / "bad.slck")
    version, _, arrays = read_checkpoint(path)
    assert version == 1 and set(arrays) == set(det.named_parameters())


def test_same_seed_same_init():
    a = C3D(C3DConfig(widths=(2,) * 8, feature_dim=4), seed=3)
    b = C3D(C3DConfig(widths=(2,) * 8, feature_dim=4), seed=3)
    c = C3D(C3DConfig(widths=(2,) * 8, feature_dim=4), seed=4)
    assert a.checksum() == b.checksum() != c.checksum()


def test_parameter_counts_golden():
    widths = (1, 8, 16, 32, 32, 64, 64, 64, 64)
    convs = sum(widths[i + 1] * widths[i] * 27 + widths[i + 1] for i in range(8))
    fcs = (64 * 128 + 128) + (128 * 128 + 128)
    assert C3D(C3DConfig(out_dim=2)).num_parameters() == convs + fcs + 2 * 128 + 2
    assert C3D(C3DConfig(out_dim=6)).num_parameters() == convs + fcs + 6 * 128 + 6
    lstm0 = 512 * 512 + 512 * 128 + 512
    lstm1 = 512 * 128 + 512 * 128 + 512
    assert Detector(DetectorConfig()).num_parameters() == lstm0 + lstm1 + 4 * 128 + 4
    assert F2G(F2GConfig()).num_parameters() == 33242  # regression value


def test_pr_ar_share_trunk_shapes():
    pr = C3D(C3DConfig(out_dim=2)).layer_shapes()
    ar = C3D(C3DConfig(out_dim=6)).layer_shapes()
    trunk = [n for n in pr if not n.startswith("out.")]
    assert all(pr[n] == ar[n] for n in trunk)
    assert pr["out.weight"] != ar["out.weight"]


def test_pr_checkpoint_into_ar_config(tmp_path):
    nets = tiny_networks()
    save_checkpoint(nets.pr, tmp_path / "pr.slck")
    with pytest.raises(CheckpointError, match="expected .* found"):
        load_checkpoint(tmp_path / "pr.slck", tiny_networks(trained=False).ar)


def test_feature_order_matters_to_detector():
    det = Detector(DetectorConfig(feature_dim=4, num_classes=2, lstm_width=6), seed=1)
    rng = np.random.default_rng(0)
    parts = [rng.standard_normal(4) for _ in range(4)]
    a, _ = det.forward_step(concat_features(*parts))
    b, _ = det.forward_step(concat_features(parts[2], parts[1], parts[0], parts[3]))
    assert not np.allclose(a, b)


def test_detector_state_threading():
    det = Detector(DetectorConfig(feature_dim=4, num_classes=2, lstm_width=6), seed=1)
    rng = np.random.default_rng(0)
    x1, x2 = rng.standard_normal(16), rng.standard_normal(16)
    _, state = det.forward_step(x1)
    threaded, _ = det.forward_step(x2, state)
    fresh, _ = det.forward_step(x2)
    assert not np.allclose(threaded, fresh)
