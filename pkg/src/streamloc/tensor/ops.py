"""Differentiable layer kernels built on :mod:`streamloc.tensor.autograd`.

Convolutions use an im2col layout: the padded input is viewed as sliding
windows, flattened to a ``[positions, Cin * kernel]`` matrix, and multiplied
with the flattened kernel. The input gradient is scattered back one kernel
offset at a time, so arbitrary strides are supported without ``np.add.at``.
"""

from __future__ import annotations

import itertools

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..exceptions import ArgumentError, DimensionError, LabelError
from .autograd import Tensor

_AXIS_NAMES = {2: ("H", "W"), 3: ("T", "H", "W")}


def _triple(v, n: int) -> tuple:
    if isinstance(v, int):
        return (v,) * n
    v = tuple(int(i) for i in v)
    if len(v) != n:
        raise ArgumentError(f"expected {n} values, got {v}")
    return v


def conv_output_shape(size: int, k: int, s: int, p: int) -> int:
    return (size + 2 * p - k) // s + 1


# -- n-d convolution core -------------------------------------------------------

def _im2col(xp: np.ndarray, ksize: tuple, stride: tuple) -> tuple[np.ndarray, tuple]:
    nd = len(ksize)
    win = sliding_window_view(xp, ksize, axis=tuple(range(2, 2 + nd)))
    win = win[(slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)]
    # win: N, C, *out, *k  ->  N, *out, C, *k
    n, c = win.shape[:2]
    out_sp = win.shape[2 : 2 + nd]
    order = (0,) + tuple(range(2, 2 + nd)) + (1,) + tuple(range(2 + nd, 2 + 2 * nd))
    cols = np.ascontiguousarray(win.transpose(order)).reshape(n * int(np.prod(out_sp)), -1)
    return cols, out_sp


def _check_conv(x: Tensor, w: Tensor, nd: int, stride, padding, op: str):
    if x.ndim != nd + 2:
        raise DimensionError(f"{op}: input must have rank {nd + 2}, got shape {x.shape}")
    if w.ndim != nd + 2:
        raise DimensionError(f"{op}: kernel must have rank {nd + 2}, got shape {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise DimensionError(
            f"{op}: axis Cin mismatch, input has {x.shape[1]} channels, kernel expects {w.shape[1]}"
        )
    for name, size, k, p in zip(_AXIS_NAMES[nd], x.shape[2:], w.shape[2:], padding):
        if size + 2 * p < k:
            raise DimensionError(
                f"{op}: axis {name} padded size {size + 2 * p} is smaller than kernel {k}"
            )


def _convnd_unit_stride(x: Tensor, w: Tensor, padding: tuple) -> Tensor:
    # Channel-major flat layout: every kernel offset is one contiguous slice of
    # the padded, flattened input. Rows that wrap across a padded border are
    # computed and then discarded.
    xd, wd = x.data, w.data
    n, cin = xd.shape[:2]
    cout = wd.shape[0]
    ksize = wd.shape[2:]
    nk = int(np.prod(ksize))
    xp = np.pad(xd.transpose(1, 0, *range(2, xd.ndim)), ((0, 0), (0, 0)) + tuple((p, p) for p in padding))
    grid = xp.shape[2:]
    lp = int(np.prod(grid))
    out_sp = tuple(g - k + 1 for g, k in zip(grid, ksize))
    strides = np.cumprod((1,) + grid[:0:-1])[::-1]
    lq = int(sum((m - 1) * s for m, s in zip(out_sp, strides))) + 1
    offsets = [int(np.dot(off, strides)) for off in itertools.product(*(range(k) for k in ksize))]
    xf = xp.reshape(cin, n, lp)
    cols = np.empty((cin, nk, n, lq), dtype=xd.dtype)
    for i, o in enumerate(offsets):
        cols[:, i] = xf[:, :, o : o + lq]
    cols = cols.reshape(cin * nk, n * lq)
    wmat = wd.reshape(cout, -1)
    span = out_sp[0] * int(strides[0])
    full = np.zeros((cout, n, span), dtype=xd.dtype)
    full[:, :, :lq] = (wmat @ cols).reshape(cout, n, lq)
    valid = (slice(None), slice(None), slice(None)) + tuple(slice(0, m) for m in out_sp[1:])
    out = full.reshape((cout, n, out_sp[0]) + grid[1:])[valid]
    out = np.ascontiguousarray(out.transpose(1, 0, *range(2, xd.ndim)))

    def backward(g):
        gq = np.zeros((cout, n, out_sp[0]) + grid[1:], dtype=xd.dtype)
        gq[valid] = g.transpose(1, 0, *range(2, xd.ndim))
        gq = gq.reshape(cout, n, span)[:, :, :lq].reshape(cout, n * lq)
        gw = (gq @ cols.T).reshape(wd.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (wmat.T @ gq).reshape(cin, nk, n, lq)
            dxf = np.zeros((cin, n, lp), dtype=xd.dtype)
            for i, o in enumerate(offsets):
                dxf[:, :, o : o + lq] += dcols[:, i]
            inner = (slice(None), slice(None)) + tuple(
                slice(p, p + size) for p, size in zip(padding, xd.shape[2:])
            )
            gx = np.ascontiguousarray(dxf.reshape((cin, n) + grid)[inner].transpose(1, 0, *range(2, xd.ndim)))
        return gx, gw

    return Tensor._make(out, (x, w), backward)


def _convnd(x: Tensor, w: Tensor, stride: tuple, padding: tuple, op: str) -> Tensor:
    nd = len(stride)
    _check_conv(x, w, nd, stride, padding, op)
    if all(s == 1 for s in stride):
        return _convnd_unit_stride(x, w, padding)
    xd, wd = x.data, w.data
    ksize = wd.shape[2:]
    cout = wd.shape[0]
    pad = ((0, 0), (0, 0)) + tuple((p, p) for p in padding)
    xp = np.pad(xd, pad) if any(padding) else xd
    cols, out_sp = _im2col(xp, ksize, stride)
    wmat = wd.reshape(cout, -1)
    n = xd.shape[0]
    out = (cols @ wmat.T).reshape((n,) + tuple(out_sp) + (cout,))
    out = np.ascontiguousarray(np.moveaxis(out, -1, 1))

    def backward(g):
        g2 = np.moveaxis(g, 1, -1).reshape(-1, cout)
        gw = (g2.T @ cols).reshape(wd.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape((n,) + tuple(out_sp) + (xd.shape[1],) + tuple(ksize))
            # -> N, C, *k, *out
            order = (0, 1 + nd) + tuple(range(2 + nd, 2 + 2 * nd)) + tuple(range(1, 1 + nd))
            dcols = dcols.transpose(order)
            dxp = np.zeros(xp.shape, dtype=xd.dtype)
            for off in itertools.product(*(range(k) for k in ksize)):
                sl = (slice(None), slice(None)) + tuple(
                    slice(o, o + s * (m - 1) + 1, s) for o, s, m in zip(off, stride, out_sp)
                )
                dxp[sl] += dcols[(slice(None), slice(None)) + off]
            inner = (slice(None), slice(None)) + tuple(
                slice(p, p + size) for p, size in zip(padding, xd.shape[2:])
            )
            gx = dxp[inner]
        return gx, gw

    return Tensor._make(out, (x, w), backward)


def conv3d(x: Tensor, kernel: Tensor, stride=1, padding=0) -> Tensor:
    """3-D convolution of ``[N, Cin, T, H, W]`` with ``[Cout, Cin, kt, kh, kw]``."""
    return _convnd(x, kernel, _triple(stride, 3), _triple(padding, 3), "conv3d")


def conv2d(x: Tensor, kernel: Tensor, stride=1, padding=0) -> Tensor:
    """2-D convolution of ``[N, Cin, H, W]`` with ``[Cout, Cin, kh, kw]``."""
    return _convnd(x, kernel, _triple(stride, 2), _triple(padding, 2), "conv2d")


def deconv2d(x: Tensor, kernel: Tensor, stride=1, padding=0) -> Tensor:
    """Transposed 2-D convolution, the adjoint of :func:`conv2d`.

    ``kernel`` has the layout of the conv2d it inverts, ``[Cin_deconv, Cout_deconv, kh, kw]``,
    so ``<conv2d(a, K), b> == <a, deconv2d(b, K)>``. Output size per axis is
    ``(size - 1) * stride - 2 * padding + k``.
    """
    stride, padding = _triple(stride, 2), _triple(padding, 2)
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"deconv2d: expected rank-4 input and kernel, got {x.shape}, {kernel.shape}")
    if x.shape[1] != kernel.shape[0]:
        raise DimensionError(
            f"deconv2d: axis Cin mismatch, input has {x.shape[1]} channels, kernel expects {kernel.shape[0]}"
        )
    xd, wd = x.data, kernel.data
    n, cin, h, w_ = xd.shape
    cout = wd.shape[1]
    ksize = wd.shape[2:]
    full = tuple((m - 1) * s + k for m, s, k in zip((h, w_), stride, ksize))
    out_sp = tuple(f - 2 * p for f, p in zip(full, padding))
    if min(out_sp) <= 0:
        raise DimensionError(f"deconv2d: padding {padding} leaves empty output {out_sp}")
    wmat = wd.reshape(cin, -1)  # Cin, Cout*k
    xrows = np.moveaxis(xd, 1, -1).reshape(-1, cin)
    cols = (xrows @ wmat).reshape(n, h, w_, cout, *ksize).transpose(0, 3, 4, 5, 1, 2)
    outp = np.zeros((n, cout) + full, dtype=xd.dtype)
    for off in itertools.product(*(range(k) for k in ksize)):
        sl = (slice(None), slice(None)) + tuple(
            slice(o, o + s * (m - 1) + 1, s) for o, s, m in zip(off, stride, (h, w_))
        )
        outp[sl] += cols[(slice(None), slice(None)) + off]
    inner = (slice(None), slice(None)) + tuple(slice(p, p + o) for p, o in zip(padding, out_sp))
    out = np.ascontiguousarray(outp[inner])

    def backward(g):
        gp = np.pad(g, ((0, 0), (0, 0)) + tuple((p, p) for p in padding)) if any(padding) else g
        gcols, _ = _im2col(gp, ksize, stride)  # N*h*w, Cout*k
        gx = gw = None
        if x.requires_grad:
            gx = np.ascontiguousarray(
                np.moveaxis((gcols @ wmat.T).reshape(n, h, w_, cin), -1, 1)
            )
        if kernel.requires_grad:
            gw = (xrows.T @ gcols).reshape(wd.shape)
        return gx, gw

    return Tensor._make(out, (x, kernel), backward)


# -- pooling ----------------------------------------------------------------------

def maxpool3d(x: Tensor, window=2, stride=None) -> Tensor:
    """Max pooling over ``[N, C, T, H, W]``; ties route gradient to the first cell."""
    window = _triple(window, 3)
    stride = window if stride is None else _triple(stride, 3)
    if x.ndim != 5:
        raise DimensionError(f"maxpool3d: input must have rank 5, got shape {x.shape}")
    for name, size, k in zip(("T", "H", "W"), x.shape[2:], window):
        if k > size:
            raise DimensionError(f"maxpool3d: axis {name} window {k} exceeds input size {size}")
    xd = x.data
    win = sliding_window_view(xd, window, axis=(2, 3, 4))
    win = win[:, :, :: stride[0], :: stride[1], :: stride[2]]
    out_sp = win.shape[2:5]
    flat = win.reshape(win.shape[:5] + (-1,))
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gx = np.zeros_like(xd)
        for idx, off in enumerate(itertools.product(*(range(k) for k in window))):
            sl = (slice(None), slice(None)) + tuple(
                slice(o, o + s * (m - 1) + 1, s) for o, s, m in zip(off, stride, out_sp)
            )
            gx[sl] += np.where(arg == idx, g, 0)
        return (gx,)

    return Tensor._make(np.ascontiguousarray(out), (x,), backward)


# -- dense and elementwise ------------------------------------------------------

def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` for ``x: [N, Din]``, ``weight: [Dout, Din]``."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(
            f"dense: axis Din mismatch, input {x.shape} vs weight {weight.shape}"
        )
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        if bias.shape != (wd.shape[0],):
            raise DimensionError(f"dense: bias shape {bias.shape} != ({wd.shape[0]},)")
        out = out + bias.data

    def backward(g):
        gx = g @ wd if x.requires_grad else None
        gw = g.T @ xd if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out, parents, backward)


def relu(x: Tensor) -> Tensor:
    xd = x.data
    mask = xd > 0
    return Tensor._make(xd * mask, (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(xd))
    out = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(xd.dtype, copy=False)
    return Tensor._make(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return Tensor._make(out, (x,), lambda g: (g * (1.0 - out * out),))


def dropout(x: Tensor, p: float, mode: str = "train", rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: zero with probability ``p`` and rescale survivors in train mode."""
    if not 0.0 <= p < 1.0:
        raise ArgumentError(f"dropout probability must be in [0, 1), got {p}")
    if mode not in ("train", "eval"):
        raise ArgumentError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or p == 0.0:
        return x
    if rng is None:
        raise ArgumentError("dropout in train mode needs a seeded generator")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) * (1.0 / (1.0 - p))
    return Tensor._make(x.data * keep, (x,), lambda g: (g * keep,))


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits: Tensor, target, class_weights=None) -> Tensor:
    """Mean over samples of ``-sum_k w_k y_k log softmax(logits)_k``.

    ``target`` is a one-hot ``[N, K]`` array. Class weights default to ones.
    """
    t = np.asarray(target.data if isinstance(target, Tensor) else target)
    if logits.ndim != 2 or t.shape != logits.shape:
        raise DimensionError(f"softmax_cross_entropy: logits {logits.shape} vs target {t.shape}")
    row_ok = np.all((t == 0) | (t == 1), axis=1) & (t.sum(axis=1) == 1)
    if not row_ok.all():
        bad = int(np.flatnonzero(~row_ok)[0])
        raise LabelError(f"softmax_cross_entropy: target row {bad} is not one-hot")
    z = logits.data
    n, k = z.shape
    w = np.ones(k, dtype=z.dtype) if class_weights is None else np.asarray(
        class_weights.data if isinstance(class_weights, Tensor) else class_weights, dtype=z.dtype
    )
    if w.shape != (k,):
        raise DimensionError(f"softmax_cross_entropy: class weights {w.shape} vs {k} classes")
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax + np.log(np.exp(z - zmax).sum(axis=1, keepdims=True))
    logp = z - lse
    wy = t.astype(z.dtype) * w
    loss = np.asarray(-(wy * logp).sum() / n, dtype=z.dtype)

    def backward(g):
        p = np.exp(logp)
        return (g * (p * wy.sum(axis=1, keepdims=True) - wy) / n,)

    return Tensor._make(loss, (logits,), backward)


def one_hot(labels, k: int, dtype=np.float32) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise LabelError(f"labels outside 0..{k - 1}: {labels}")
    out = np.zeros((labels.size, k), dtype=dtype)
    out[np.arange(labels.size), labels] = 1
    return out


# -- recurrent cells ------------------------------------------------------------

def _gates(z: Tensor, c: Tensor, axis: int) -> tuple[Tensor, Tensor]:
    dh = z.shape[axis] // 4
    sl = [slice(None)] * z.ndim

    def part(i):
        sl[axis] = slice(i * dh, (i + 1) * dh)
        return z[tuple(sl)]

    i, f, g, o = sigmoid(part(0)), sigmoid(part(1)), tanh(part(2)), sigmoid(part(3))
    c_new = f * c + i * g
    h_new = o * tanh(c_new)
    return h_new, c_new


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, params: dict) -> tuple[Tensor, Tensor]:
    """One LSTM step. ``params`` holds ``w_x [4Dh, Din]``, ``w_h [4Dh, Dh]``, ``b [4Dh]``.

    Gate blocks are ordered input, forget, candidate, output.
    """
    w_x, w_h, b = params["w_x"], params["w_h"], params["b"]
    dh = w_h.shape[1]
    if x.ndim != 2 or x.shape[1] != w_x.shape[1]:
        raise DimensionError(f"lstm_cell: axis Din mismatch, x {x.shape} vs w_x {w_x.shape}")
    if h.shape != (x.shape[0], dh) or c.shape != h.shape:
        raise DimensionError(f"lstm_cell: state shapes h {h.shape}, c {c.shape}, expected ({x.shape[0]}, {dh})")
    z = dense(x, w_x, b) + dense(h, w_h)
    return _gates(z, c, axis=1)


def conv_lstm_cell(x: Tensor, h: Tensor, c: Tensor, params: dict) -> tuple[Tensor, Tensor]:
    """Convolutional LSTM step with same-padding; spatial size is preserved.

    ``params``: ``w_x [4Dh, Cin, k, k]``, ``w_h [4Dh, Dh, k, k]``, ``b [4Dh]``.
    """
    w_x, w_h, b = params["w_x"], params["w_h"], params["b"]
    if x.ndim != 4 or h.ndim != 4:
        raise DimensionError(f"conv_lstm_cell: expected rank-4 x and h, got {x.shape}, {h.shape}")
    if x.shape[2:] != h.shape[2:] or c.shape != h.shape:
        raise DimensionError(
            f"conv_lstm_cell: spatial mismatch x {x.shape[2:]}, h {h.shape[2:]}, c {c.shape[2:]}"
        )
    k = w_x.shape[-1]
    pad = k // 2
    z = conv2d(x, w_x, 1, pad) + conv2d(h, w_h, 1, pad)
    z = z + b.reshape(1, -1, 1, 1)
    return _gates(z, c, axis=1)
