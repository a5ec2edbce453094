"""Float64 finite-difference checks of every differentiable layer and of small networks."""

from __future__ import annotations

import numpy as np

from .networks import C3D, F2G, C3DConfig, Detector, DetectorConfig, F2GConfig
from .tensor import (
    GradCheckReport,
    Tensor,
    conv2d,
    conv3d,
    conv_lstm_cell,
    deconv2d,
    dense,
    dropout,
    finite_difference_check,
    lstm_cell,
    maxpool3d,
    one_hot,
    relu,
    sigmoid,
    softmax_cross_entropy,
    tanh,
)
from .tensor.autograd import tsum

TOLERANCE = 1e-4


def _t(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def _proj(rng, out: Tensor):
    """Random linear functional so every output coordinate matters."""
    w = rng.standard_normal(out.shape)
    return lambda o: tsum(o * w)


def _check(rng, build, tensors, max_entries=40) -> GradCheckReport:
    probe = build()
    f = _proj(rng, probe)
    return finite_difference_check(lambda: f(build()), tensors, max_entries=max_entries)


def layer_checks(seed: int = 0) -> dict[str, GradCheckReport]:
    rng = np.random.default_rng(seed)
    out = {}

    x, w = _t(rng, 2, 2, 4, 5, 5), _t(rng, 3, 2, 3, 3, 3)
    out["conv3d"] = _check(rng, lambda: conv3d(x, w, 1, 1), {"x": x, "w": w})
    x, w = _t(rng, 2, 2, 5, 7, 6), _t(rng, 3, 2, 2, 3, 3)
    out["conv3d_strided"] = _check(rng, lambda: conv3d(x, w, (1, 2, 2), (0, 1, 1)), {"x": x, "w": w})
    x, w = _t(rng, 2, 3, 8, 8), _t(rng, 4, 3, 4, 4)
    out["conv2d"] = _check(rng, lambda: conv2d(x, w, 2, 1), {"x": x, "w": w})
    x, w = _t(rng, 2, 3, 4, 4), _t(rng, 3, 2, 4, 4)
    out["deconv2d"] = _check(rng, lambda: deconv2d(x, w, 2, 1), {"x": x, "w": w})
    x = _t(rng, 2, 2, 4, 6, 6)
    out["maxpool3d"] = _check(rng, lambda: maxpool3d(x, 2, 2), {"x": x})
    out["maxpool3d_121"] = _check(rng, lambda: maxpool3d(x, (1, 2, 2), (1, 2, 2)), {"x": x})
    x, w, b = _t(rng, 4, 6), _t(rng, 5, 6), _t(rng, 5)
    out["dense"] = _check(rng, lambda: dense(x, w, b), {"x": x, "w": w, "b": b})
    x = Tensor(rng.uniform(0.1, 1.0, (5, 7)) * rng.choice([-1, 1], (5, 7)), requires_grad=True)
    out["relu"] = _check(rng, lambda: relu(x), {"x": x})
    x = _t(rng, 5, 7, scale=2.0)
    out["sigmoid"] = _check(rng, lambda: sigmoid(x), {"x": x})
    out["tanh"] = _check(rng, lambda: tanh(x), {"x": x})
    mask_rng = 1234

    def drop():
        return dropout(x, 0.5, "train", np.random.default_rng(mask_rng))

    out["dropout"] = _check(rng, drop, {"x": x})
    logits = _t(rng, 6, 4)
    target = one_hot(rng.integers(0, 4, 6), 4, np.float64)
    cw = rng.uniform(0.5, 1.0, 4)
    out["softmax_ce"] = finite_difference_check(lambda: softmax_cross_entropy(logits, target, cw), {"logits": logits})
    xs, h, c = _t(rng, 3, 5), _t(rng, 3, 4), _t(rng, 3, 4)
    p = {"w_x": _t(rng, 16, 5, scale=0.5), "w_h": _t(rng, 16, 4, scale=0.5), "b": _t(rng, 16)}

    def lstm():
        hn, cn = lstm_cell(xs, h, c, p)
        return hn * 2.0 + cn

    out["lstm_cell"] = _check(rng, lstm, {"x": xs, "h": h, "c": c, **p})
    xs, h, c = _t(rng, 2, 2, 4, 4), _t(rng, 2, 3, 4, 4), _t(rng, 2, 3, 4, 4)
    p = {"w_x": _t(rng, 12, 2, 3, 3, scale=0.3), "w_h": _t(rng, 12, 3, 3, 3, scale=0.3), "b": _t(rng, 12)}

    def clstm():
        hn, cn = conv_lstm_cell(xs, h, c, p)
        return hn * 2.0 + cn

    out["conv_lstm_cell"] = _check(rng, clstm, {"x": xs, "h": h, "c": c, **p})
    return out


def _generic_point(module, rng) -> None:
    """Small positive biases keep ReLUs away from the kink at exactly zero."""
    for name, p in module.named_parameters().items():
        if name.endswith(".bias") or name.endswith(".b"):
            p.data = rng.uniform(0.05, 0.3, p.shape)


def network_checks(seed: int = 0, max_entries: int = 12) -> dict[str, GradCheckReport]:
    """Whole-network gradients of tiny float64 instances (eval-mode dropout)."""
    rng = np.random.default_rng(seed)
    out = {}
    c3d = C3D(C3DConfig(frame_size=(8, 8), clip_length=4, widths=(2,) * 8, feature_dim=6, out_dim=3, dtype="f64"), seed)
    _generic_point(c3d, rng)
    x = Tensor(rng.uniform(0, 1, (2, 1, 4, 8, 8)))
    target = one_hot([0, 2], 3, np.float64)
    params = {n: p.value for n, p in c3d.named_parameters().items()}
    out["c3d"] = finite_difference_check(
        lambda: softmax_cross_entropy(c3d.forward(x)[0], target), params, max_entries=max_entries)

    f2g = F2G(F2GConfig(frame_size=(8, 8), context=3, horizon=2, content_widths=(2, 2), motion_widths=(2, 2),
                        lstm_width=2, decoder_widths=(2,), refine_width=2, dtype="f64"), seed)
    # give the zero-initialized head some weight so every path carries gradient
    f2g["refine.weight"].data = rng.standard_normal(f2g["refine.weight"].shape) * 0.2
    _generic_point(f2g, rng)
    ctx = Tensor(rng.uniform(0.3, 0.7, (2, 3, 1, 8, 8)))
    tgt = rng.uniform(0.3, 0.7, (2, 2, 1, 8, 8))
    params = {n: p.value for n, p in f2g.named_parameters().items()}

    def f2g_loss():
        frames = f2g.forward(ctx)
        total = None
        for hstep, fr in enumerate(frames):
            d = fr - tgt[:, hstep]
            term = tsum(d * d)
            total = term if total is None else total + term
        return total

    out["f2g"] = finite_difference_check(f2g_loss, params, max_entries=max_entries)

    det = Detector(DetectorConfig(feature_dim=3, num_classes=2, lstm_width=4, num_layers=2, dtype="f64"), seed)
    feats = rng.standard_normal((3, 2, 12))
    labels = [one_hot(rng.integers(0, 3, 2), 3, np.float64) for _ in range(3)]
    params = {n: p.value for n, p in det.named_parameters().items()}

    def det_loss():
        state = det.initial_state(2)
        total = None
        for step in range(3):
            logits, state = det.step(Tensor(feats[step]), state)
            term = softmax_cross_entropy(logits, labels[step], np.array([0.5, 0.75, 1.0]))
            total = term if total is None else total + term
        return total

    out["detector"] = finite_difference_check(det_loss, params, max_entries=max_entries)
    return out


def run_all(seed: int = 0) -> dict[str, GradCheckReport]:
    return {**layer_checks(seed), **network_checks(seed)}
