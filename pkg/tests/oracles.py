"""Deliberately naive reference implementations used as test oracles.

Nothing here imports the kernels under test; loops are written out so each
output element can be read off the definition.
"""

import itertools

import numpy as np


def conv_nd_loops(x, w, stride, padding):
    """Cross-correlation of ``[N, Cin, *S]`` with ``[Cout, Cin, *K]``, zero padding."""
    nd = x.ndim - 2
    xp = np.pad(x, ((0, 0), (0, 0)) + tuple((p, p) for p in padding))
    n, cin = x.shape[:2]
    cout = w.shape[0]
    ks = w.shape[2:]
    out_sp = [(xp.shape[2 + a] - ks[a]) // stride[a] + 1 for a in range(nd)]
    out = np.zeros([n, cout] + out_sp)
    for b in range(n):
        for co in range(cout):
            for pos in itertools.product(*(range(o) for o in out_sp)):
                acc = 0.0
                for ci in range(cin):
                    for off in itertools.product(*(range(k) for k in ks)):
                        src = tuple(p * s + o for p, s, o in zip(pos, stride, off))
                        acc += xp[(b, ci) + src] * w[(co, ci) + off]
                out[(b, co) + pos] = acc
    return out


def deconv2d_scatter(x, w, stride, padding):
    """Transposed conv as an explicit scatter of every input cell."""
    n, cin, h, wd = x.shape
    cout, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    full = np.zeros((n, cout, (h - 1) * stride[0] + kh, (wd - 1) * stride[1] + kw))
    for b in range(n):
        for ci in range(cin):
            for i in range(h):
                for j in range(wd):
                    for co in range(cout):
                        for a in range(kh):
                            for c in range(kw):
                                full[b, co, i * stride[0] + a, j * stride[1] + c] += x[b, ci, i, j] * w[ci, co, a, c]
    ph, pw = padding
    return full[:, :, ph : full.shape[2] - ph, pw : full.shape[3] - pw]


def maxpool3d_loops(x, window, stride):
    n, c, t, h, w = x.shape
    out_sp = [(s - k) // st + 1 for s, k, st in zip((t, h, w), window, stride)]
    out = np.zeros([n, c] + out_sp)
    for b in range(n):
        for ch in range(c):
            for pos in itertools.product(*(range(o) for o in out_sp)):
                best = -np.inf
                for off in itertools.product(*(range(k) for k in window)):
                    src = tuple(p * s + o for p, s, o in zip(pos, stride, off))
                    best = max(best, x[(b, ch) + src])
                out[(b, ch) + pos] = best
    return out


def iou_sets(a, b):
    """IoU of two half-open spans by counting frames."""
    fa, fb = set(range(*a)), set(range(*b))
    return len(fa & fb) / len(fa | fb)


def ap_from_ranked(flags, num_gt):
    """Interpolated AP by integrating the precision envelope over recall levels."""
    flags = list(flags)
    points = []
    tp = 0
    for i, f in enumerate(flags, 1):
        tp += int(f)
        points.append((tp / num_gt, tp / i))
    total, prev_r = 0.0, 0.0
    for r in sorted({p[0] for p in points}):
        if r <= prev_r:
            continue
        p_interp = max(p for rr, p in points if rr >= r)
        total += (r - prev_r) * p_interp
        prev_r = r
    return total


def best_assignment_ap(spans, confidences, gts, theta):
    """Max AP over every one-to-one detection/GT assignment with IoU >= theta.

    Detections are ranked by descending confidence (stable); a detection whose
    assigned GT is ``None`` or taken by another is a false positive.
    """
    order = sorted(range(len(spans)), key=lambda i: -confidences[i])
    best = 0.0
    choices = [[None] + [g for g in range(len(gts)) if iou_sets(spans[i], gts[g]) >= theta] for i in order]
    for pick in itertools.product(*choices):
        used = [g for g in pick if g is not None]
        if len(used) != len(set(used)):
            continue
        best = max(best, ap_from_ranked([g is not None for g in pick], len(gts)))
    return best
