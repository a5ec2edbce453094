"""Temporal IoU, interval matching, interpolated AP, mAP and per-frame mAP.

Detections and ground truths may be given either as flat lists (one stream) or
as ``{stream_id: list}`` mappings. Matching never crosses streams or classes.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data.stream import Interval
from .events import DetectionEvent
from .exceptions import ArgumentError, StreamlocError

DEFAULT_THRESHOLDS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.75, 0.95)
LOCALIZATION_THRESHOLDS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7)


class UndefinedClassError(StreamlocError):
    """AP is undefined for a class without ground-truth instances."""


def _span(x) -> tuple[int, int]:
    if isinstance(x, (Interval,)):
        s, e = x.start_frame, x.end_frame
    elif isinstance(x, DetectionEvent):
        s, e = x.start_frame, x.end_frame
    else:
        s, e = x
    if e <= s:
        raise ArgumentError(f"degenerate interval [{s}, {e})")
    return s, e


def iou(pred, gt) -> float:
    """Intersection over union of two half-open frame spans."""
    ps, pe = _span(pred)
    gs, ge = _span(gt)
    inter = max(0, min(pe, ge) - max(ps, gs))
    union = (pe - ps) + (ge - gs) - inter
    return inter / union


def _by_stream(items) -> dict:
    if isinstance(items, Mapping):
        return {k: list(v) for k, v in items.items()}
    return {"": list(items)}


@dataclass
class MatchResult:
    """Per-class TP flags and confidences (descending confidence) plus GT counts."""

    theta: float
    flags: dict[int, list[bool]] = field(default_factory=dict)
    confidences: dict[int, list[float]] = field(default_factory=dict)
    num_gt: dict[int, int] = field(default_factory=dict)
    matched_gt: set = field(default_factory=set)

    @property
    def tp(self) -> int:
        return sum(sum(f) for f in self.flags.values())

    @property
    def fp(self) -> int:
        return sum(len(f) - sum(f) for f in self.flags.values())


def _sorted_events(events_by_stream: dict) -> list[tuple[str, int, DetectionEvent]]:
    flat = [(sid, i, ev) for sid, evs in events_by_stream.items() for i, ev in enumerate(evs)]
    # stable: ties keep stream order, then emission order
    return sorted(flat, key=lambda x: -x[2].confidence)


def match_detections(events, gts, theta: float) -> MatchResult:
    """Confidence-ordered matching at IoU threshold ``theta``.

    Events are visited by descending confidence. Each takes the unmatched
    same-class ground truth with the highest IoU ``>= theta``; when all of its
    eligible ground truths are taken, an earlier event may be moved to another
    eligible one (augmenting path) so the new event can still match. Matched
    events stay matched, so every confidence prefix has the largest possible
    TP count. Events left without a ground truth are false positives.
    """
    ev_map, gt_map = _by_stream(events), _by_stream(gts)
    res = MatchResult(theta)
    for sid, intervals in gt_map.items():
        for iv in intervals:
            res.num_gt[iv.class_id] = res.num_gt.get(iv.class_id, 0) + 1
    owner: dict[tuple, int] = {}  # (stream, gt index) -> event position
    options: list[list[tuple]] = []

    def augment(ei: int, seen: set) -> bool:
        for key in options[ei]:
            if key in seen:
                continue
            seen.add(key)
            if key not in owner or augment(owner[key], seen):
                owner[key] = ei
                return True
        return False

    for sid, _, ev in _sorted_events(ev_map):
        scored = []
        for gi, iv in enumerate(gt_map.get(sid, ())):
            if iv.class_id == ev.class_id:
                o = iou(ev, iv)
                if o >= theta:
                    scored.append((-o, gi))
        options.append([(sid, gi) for _, gi in sorted(scored)])
        hit = augment(len(options) - 1, set())
        res.flags.setdefault(ev.class_id, []).append(hit)
        res.confidences.setdefault(ev.class_id, []).append(ev.confidence)
    res.matched_gt = set(owner)
    return res


def average_precision(flags: Sequence[bool], confidences: Sequence[float], num_gt: int) -> float:
    """All-point interpolated AP: ``sum_i (R_i - R_{i-1}) * max_{j >= i} P_j``."""
    if num_gt <= 0:
        raise UndefinedClassError("AP is undefined without ground-truth instances")
    if len(flags) == 0:
        return 0.0
    order = np.argsort(-np.asarray(confidences, dtype=np.float64), kind="stable")
    hits = np.asarray(flags, dtype=np.float64)[order]
    tp = np.cumsum(hits)
    fp = np.cumsum(1.0 - hits)
    recall = tp / num_gt
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * envelope))


def class_aps(events, gts, theta: float, num_classes: int | None = None) -> dict[int, float]:
    """AP per class with at least one ground truth."""
    res = match_detections(events, gts, theta)
    classes = sorted(res.num_gt) if num_classes is None else [k for k in range(num_classes) if res.num_gt.get(k)]
    return {
        k: average_precision(res.flags.get(k, []), res.confidences.get(k, []), res.num_gt[k])
        for k in classes
    }


def map_at(events, gts, thetas=DEFAULT_THRESHOLDS, num_classes: int | None = None) -> dict[float, float]:
    """Unweighted mean of per-class AP for every threshold."""
    gt_map = _by_stream(gts)
    if not any(gt_map.values()):
        raise ArgumentError("mAP needs at least one ground-truth interval")
    return {float(t): float(np.mean(list(class_aps(events, gt_map, t, num_classes).values()))) for t in thetas}


def evaluation_table(events, gts, thetas=DEFAULT_THRESHOLDS, class_names=None) -> dict:
    """Per-class AP and mAP for each threshold, JSON-ready."""
    gt_map = _by_stream(gts)
    k = len(class_names) if class_names else None
    table = {"thresholds": [float(t) for t in thetas], "per_class": {}, "mAP": {}}
    for t in thetas:
        aps = class_aps(events, gt_map, t, k)
        for cid, ap in aps.items():
            name = class_names[cid] if class_names else str(cid)
            table["per_class"].setdefault(name, {})[f"{t:g}"] = ap
        table["mAP"][f"{t:g}"] = float(np.mean(list(aps.values())))
    return table


def format_table(table: dict) -> str:
    keys = [f"{t:g}" for t in table["thresholds"]]
    lines = ["class".ljust(20) + "".join(k.rjust(8) for k in keys)]
    for name, row in table["per_class"].items():
        lines.append(name.ljust(20) + "".join(f"{row.get(k, float('nan')):8.4f}" for k in keys))
    lines.append("mAP".ljust(20) + "".join(f"{table['mAP'][k]:8.4f}" for k in keys))
    return "\n".join(lines)


# -- per-frame mAP -------------------------------------------------------------------

def per_frame_map(per_frame_scores, gts, num_classes: int | None = None) -> float:
    """Frame-level mAP over action classes.

    ``per_frame_scores`` is ``[T, >=K]`` (or a mapping of such arrays by stream);
    column ``k`` scores class ``k``. Frames are ranked by score with ties broken
    by frame index; frames with a score of exactly zero are never retrieved. A
    frame is positive for class ``k`` when it lies inside a class-``k`` interval.
    """
    score_map = per_frame_scores if isinstance(per_frame_scores, Mapping) else {"": per_frame_scores}
    gt_map = _by_stream(gts)
    scores, labels = [], []
    for sid, sc in score_map.items():
        sc = np.asarray(sc, dtype=np.float64)
        lab = np.full(len(sc), -1, dtype=np.int64)
        for iv in gt_map.get(sid, ()):
            lab[iv.start_frame : iv.end_frame] = iv.class_id
        scores.append(sc)
        labels.append(lab)
    scores = np.concatenate(scores)
    labels = np.concatenate(labels)
    k = num_classes if num_classes is not None else scores.shape[1]
    aps = []
    for c in range(k):
        pos = labels == c
        if not pos.any():
            continue
        s = scores[:, c]
        keep = np.flatnonzero(s != 0)
        aps.append(average_precision(pos[keep], s[keep], int(pos.sum())))
    if not aps:
        raise ArgumentError("per-frame mAP needs at least one positive frame")
    return float(np.mean(aps))


# -- brute-force oracle -------------------------------------------------------------

def exhaustive_best_ap(events: Sequence[DetectionEvent], gts: Sequence[Interval], theta: float, class_id: int) -> float:
    """Best AP over every one-to-one assignment of class events to eligible GTs.

    Independent check of :func:`match_detections` for small instances (single stream).
    """
    evs = [e for e in events if e.class_id == class_id]
    gt = [g for g in gts if g.class_id == class_id]
    if not gt:
        raise UndefinedClassError(f"class {class_id} has no ground truth")
    eligible = [[None] + [j for j, g in enumerate(gt) if iou(e, g) >= theta] for e in evs]
    best = 0.0
    for choice in itertools.product(*eligible):
        used = [c for c in choice if c is not None]
        if len(used) != len(set(used)):
            continue
        ap = average_precision([c is not None for c in choice], [e.confidence for e in evs], len(gt))
        best = max(best, ap)
    return best
