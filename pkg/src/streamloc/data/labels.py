"""Window-level targets for the PR, AR and detection networks.

A window ``[start, start + tau)`` is an action window when at least half of
its frames lie inside ground-truth intervals. Its class comes from the
interval covering the most frames (earliest on ties). The AR phase compares
the window's center frame ``start + tau // 2`` with that interval's phase
switch: centers at or after the switch are finishing.
"""

from __future__ import annotations

from ..exceptions import LabelError
from ..networks.labels import BEGINNING, FINISHING
from .stream import AnnotatedStream

BACKGROUND, ACTION = 0, 1


def _check_window(stream: AnnotatedStream, start: int, tau: int) -> None:
    if start < 0 or start + tau > len(stream):
        raise IndexError(f"window [{start}, {start + tau}) outside stream of length {len(stream)}")


def _majority(stream: AnnotatedStream, start: int, tau: int):
    end = start + tau
    covered = 0
    best, best_overlap = None, 0
    for i, iv in enumerate(stream.intervals):
        ov = min(end, iv.end_frame) - max(start, iv.start_frame)
        if ov > 0:
            covered += ov
            if ov > best_overlap:
                best, best_overlap = i, ov
    return covered, best


def is_action_window(stream: AnnotatedStream, start: int, tau: int = 16) -> bool:
    _check_window(stream, start, tau)
    covered, _ = _majority(stream, start, tau)
    return 2 * covered >= tau


def derive_pr_labels(stream: AnnotatedStream, window_start: int, tau: int = 16) -> int:
    """1 (action) or 0 (background)."""
    return ACTION if is_action_window(stream, window_start, tau) else BACKGROUND


def derive_ar_labels(stream: AnnotatedStream, window_start: int, tau: int = 16) -> int:
    """AR subclass ``2k + phase`` of an action window."""
    _check_window(stream, window_start, tau)
    covered, idx = _majority(stream, window_start, tau)
    if 2 * covered < tau:
        raise LabelError(f"window at {window_start} is a background window; it has no AR label")
    iv = stream.intervals[idx]
    phase = FINISHING if window_start + tau // 2 >= stream.phase_switches[idx] else BEGINNING
    return 2 * iv.class_id + phase


def derive_det_labels(stream: AnnotatedStream, window_start: int, num_classes: int, tau: int = 16) -> int:
    """Class id of an action window, or ``num_classes`` for background."""
    _check_window(stream, window_start, tau)
    covered, idx = _majority(stream, window_start, tau)
    if 2 * covered < tau:
        return num_classes
    return stream.intervals[idx].class_id


def window_starts(length: int, tau: int = 16, stride: int = 16) -> range:
    """Start frames of every complete window, ``floor((length - tau) / stride) + 1`` of them."""
    if length < tau:
        return range(0)
    return range(0, length - tau + 1, stride)
