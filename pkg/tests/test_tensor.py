import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import conv_nd_loops, deconv2d_scatter, maxpool3d_loops
from streamloc.exceptions import ArgumentError, DimensionError, LabelError
from streamloc.gradchecks import TOLERANCE, layer_checks
from streamloc.tensor import (
    SGD,
    Parameter,
    RMSProp,
    Tensor,
    conv2d,
    conv3d,
    conv_output_shape,
    deconv2d,
    dense,
    dropout,
    maxpool3d,
    no_grad,
    one_hot,
    rmsprop_step,
    sgd_step,
    softmax_cross_entropy,
)
from streamloc.tensor.autograd import tsum


def rel_err(a, b):
    return np.abs(a - b).max() / max(np.abs(b).max(), 1e-12)


@pytest.mark.parametrize("stride,padding", [((1, 1, 1), (1, 1, 1)), ((1, 2, 2), (0, 1, 1)), ((2, 1, 2), (1, 0, 0))])
def test_conv3d_matches_loops(stride, padding):
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 2, 4, 5, 6))
    w = rng.standard_normal((3, 2, 3, 3, 2))
    out = conv3d(Tensor(x), Tensor(w), stride, padding).data
    assert rel_err(out, conv_nd_loops(x, w, stride, padding)) < 1e-10


@pytest.mark.parametrize("stride,padding", [((1, 1), (1, 1)), ((2, 2), (1, 1)), ((2, 1), (0, 2))])
def test_conv2d_matches_loops(stride, padding):
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 3, 7, 6))
    w = rng.standard_normal((4, 3, 3, 3))
    out = conv2d(Tensor(x), Tensor(w), stride, padding).data
    assert rel_err(out, conv_nd_loops(x, w, stride, padding)) < 1e-10


def test_conv_output_shape_formula():
    assert conv_output_shape(32, 3, 1, 1) == 32
    assert conv_output_shape(8, 4, 2, 1) == 4
    out = conv3d(Tensor(np.zeros((1, 1, 16, 32, 32))), Tensor(np.zeros((2, 1, 3, 3, 3))), 1, 1)
    assert out.shape == (1, 2, 16, 32, 32)


def test_conv_channel_mismatch_names_axis():
    with pytest.raises(DimensionError, match="Cin"):
        conv3d(Tensor(np.zeros((1, 2, 4, 4, 4))), Tensor(np.zeros((1, 3, 3, 3, 3))))
    with pytest.raises(DimensionError):
        conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))))


def test_deconv_matches_scatter_and_is_adjoint():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 3, 4, 4))
    k = rng.standard_normal((3, 2, 4, 4))
    out = deconv2d(Tensor(x), Tensor(k), 2, 1).data
    assert out.shape == (2, 2, 8, 8)
    assert rel_err(out, deconv2d_scatter(x, k, (2, 2), (1, 1))) < 1e-10
    # <conv(a, K), b> == <a, deconv(b, K)> with K read as a conv kernel [Cout=3, Cin=2]
    a = rng.standard_normal((2, 2, 8, 8))
    lhs = np.sum(conv2d(Tensor(a), Tensor(k), 2, 1).data * x)
    rhs = np.sum(a * out)
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_maxpool_matches_loops():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((2, 3, 4, 6, 6))
    for window in ((2, 2, 2), (1, 2, 2)):
        out = maxpool3d(Tensor(x), window).data
        assert np.array_equal(out, maxpool3d_loops(x, window, window))


def test_maxpool_tie_routes_to_first_cell():
    x = Tensor(np.ones((1, 1, 2, 2, 2)), requires_grad=True)
    out = maxpool3d(x, 2)
    assert out.data.item() == 1.0
    out.backward(np.ones_like(out.data))
    expected = np.zeros((1, 1, 2, 2, 2))
    expected[0, 0, 0, 0, 0] = 1.0
    assert np.array_equal(x.grad, expected)


def test_maxpool_window_too_large():
    with pytest.raises(DimensionError, match="axis T"):
        maxpool3d(Tensor(np.zeros((1, 1, 1, 4, 4))), (2, 2, 2))


def test_all_layers_pass_gradcheck():
    reports = layer_checks(seed=0)
    failing = {k: r.max_error for k, r in reports.items() if not r.passed(TOLERANCE)}
    assert not failing


def test_broadcast_gradient_sums_over_expanded_axes():
    a = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.ones(4), requires_grad=True)
    tsum((a + b) * 2.0).backward()
    assert np.array_equal(b.grad, np.full(4, 6.0))
    assert np.array_equal(a.grad, np.full((3, 4), 2.0))


def test_no_grad_builds_no_graph():
    a = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        out = a * 2.0
    assert not out.requires_grad


def test_dense_forward():
    x = Tensor(np.array([[1.0, 2.0]]))
    w = Tensor(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]))
    b = Tensor(np.array([0.5, 0.0, -1.0]))
    assert np.array_equal(dense(x, w, b).data, [[1.5, 2.0, 2.0]])


def test_softmax_ce_hand_value():
    logits = Tensor(np.array([[0.0, 0.0], [np.log(3.0), 0.0]]))
    target = one_hot([0, 1], 2, np.float64)
    # -(log 1/2 + log 1/4) / 2
    expected = (np.log(2) + np.log(4)) / 2
    assert softmax_cross_entropy(logits, target).item() == pytest.approx(expected, rel=1e-12)
    weighted = softmax_cross_entropy(logits, target, [0.5, 1.0]).item()
    assert weighted == pytest.approx((0.5 * np.log(2) + np.log(4)) / 2, rel=1e-12)


def test_softmax_ce_rejects_soft_targets():
    with pytest.raises(LabelError, match="row 1"):
        softmax_cross_entropy(Tensor(np.zeros((2, 2))), np.array([[1.0, 0.0], [0.5, 0.5]]))


def test_one_hot_out_of_range():
    with pytest.raises(LabelError):
        one_hot([0, 3], 3)


def test_dropout_modes():
    x = Tensor(np.ones((100, 10)))
    assert dropout(x, 0.5, "eval") is x
    out = dropout(x, 0.5, "train", np.random.default_rng(0)).data
    assert set(np.unique(out)) <= {0.0, 2.0}
    with pytest.raises(ArgumentError):
        dropout(x, 1.0)
    with pytest.raises(ArgumentError):
        dropout(x, 0.5, "train")


def test_sgd_step_hand_formula():
    theta = np.array([1.0, -2.0])
    v = np.array([0.1, 0.0])
    g = np.array([0.5, 1.0])
    sgd_step(theta, g, v, lr=0.1, momentum=0.9, weight_decay=0.01)
    v_exp = 0.9 * np.array([0.1, 0.0]) - 0.1 * (g + 0.01 * np.array([1.0, -2.0]))
    assert np.allclose(v, v_exp, rtol=0, atol=1e-15)
    assert np.allclose(theta, np.array([1.0, -2.0]) + v_exp, rtol=0, atol=1e-15)


def test_rmsprop_step_hand_formula():
    theta, s, g = np.array([1.0]), np.array([4.0]), np.array([2.0])
    rmsprop_step(theta, g, s, lr=0.01, decay=0.9, epsilon=1e-8)
    assert s[0] == pytest.approx(0.9 * 4 + 0.1 * 4)
    assert theta[0] == pytest.approx(1.0 - 0.01 * 2.0 / (2.0 + 1e-8))


@pytest.mark.parametrize("opt_cls", [SGD, RMSProp])
def test_optimizer_minimizes_quadratic(opt_cls):
    p = Parameter("w", np.array([3.0, -1.0]))
    opt = opt_cls([p], lr=0.05) if opt_cls is RMSProp else opt_cls([p], lr=0.05, weight_decay=0.0)
    for _ in range(300):
        opt.zero_grad()
        tsum(p.value * p.value).backward()
        opt.step()
    assert np.abs(p.data).max() < 0.1


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(3, 6), st.integers(1, 2), st.integers(0, 1), st.integers(0, 10_000))
def test_conv2d_property(cin, size, stride, pad, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, cin, size, size + 1))
    w = rng.standard_normal((2, cin, 3, 2))
    if size + 2 * pad < 3:
        return
    out = conv2d(Tensor(x), Tensor(w), stride, pad).data
    assert rel_err(out, conv_nd_loops(x, w, (stride, stride), (pad, pad))) < 1e-10
