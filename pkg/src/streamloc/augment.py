"""Temporal augmentation: frame subsampling (speed-up) and motion interpolation (slow-down)."""

from __future__ import annotations

import logging
import math

import numpy as np
from scipy.ndimage import map_coordinates

from .data.stream import AnnotatedStream, Interval
from .exceptions import ArgumentError, DimensionError

log = logging.getLogger(__name__)

BLOCK = 8
SEARCH = 4


def speed_up(stream: AnnotatedStream, factor: int = 2) -> AnnotatedStream:
    """Keep every ``factor``-th frame starting at 0.

    A boundary ``i`` maps to ``ceil(i / factor)``, so a remapped interval holds
    exactly the kept frames that were inside the original one. Intervals with no
    kept frame are dropped; the count is recorded in the provenance.
    """
    if not isinstance(factor, (int, np.integer)) or factor < 2:
        raise ArgumentError(f"speed-up factor must be an integer >= 2, got {factor}")
    if len(stream) < factor:
        raise ArgumentError(f"stream of length {len(stream)} is shorter than factor {factor}")
    frames = np.ascontiguousarray(stream.frames[::factor])
    intervals, switches = [], []
    dropped = 0
    for iv, m in zip(stream.intervals, stream.phase_switches):
        s, e = math.ceil(iv.start_frame / factor), math.ceil(iv.end_frame / factor)
        if e <= s:
            dropped += 1
            continue
        intervals.append(Interval(s, e, iv.class_id))
        switch = math.ceil(m / factor)
        if e - s > 1:
            switch = min(max(switch, s + 1), e - 1)
        switches.append(switch)
    if dropped:
        log.warning("speed_up(%s, %d): dropped %d degenerate interval(s)", stream.stream_id, factor, dropped)
    return AnnotatedStream(
        frames, intervals, switches, f"{stream.stream_id}+fast{factor}",
        provenance={"origin": stream.stream_id, "transform": f"speed_up:{factor}", "dropped": dropped},
        classes=stream.classes,
    )


def slow_down(stream: AnnotatedStream, factor: int = 2, kernel: str = "flow") -> AnnotatedStream:
    """Insert one interpolated frame between each adjacent pair (length ``2T - 1``)."""
    if factor != 2:
        raise ArgumentError("only a slow-down factor of 2 is supported")
    t = len(stream)
    if t < 2:
        raise ArgumentError("slow_down needs at least two frames")
    src = stream.frames
    out = np.empty((2 * t - 1,) + src.shape[1:], dtype=src.dtype)
    out[0::2] = src
    for i in range(t - 1):
        out[2 * i + 1] = interpolate_pair(src[i], src[i + 1], 0.5, kernel)
    n = len(out)
    intervals = [Interval(2 * iv.start_frame, min(2 * iv.end_frame, n), iv.class_id) for iv in stream.intervals]
    switches = [2 * m for m in stream.phase_switches]
    return AnnotatedStream(
        out, intervals, switches, f"{stream.stream_id}+slow2",
        provenance={"origin": stream.stream_id, "transform": f"slow_down:2:{kernel}"},
        classes=stream.classes,
    )


def augment_corpus(streams, kernel: str = "flow") -> list[AnnotatedStream]:
    """Originals followed by their 2x-faster and 2x-slower copies."""
    fast = [speed_up(s, 2) for s in streams]
    slow = [slow_down(s, 2, kernel) for s in streams]
    return list(streams) + fast + slow


# -- frame interpolation -------------------------------------------------------------

def block_flow(a: np.ndarray, b: np.ndarray, block: int = BLOCK, search: int = SEARCH) -> np.ndarray:
    """Per-block integer translation ``(dy, dx)`` that best maps ``a`` onto ``b`` (SAD).

    Among equal costs the smallest displacement wins, so static blocks stay still.
    """
    h, w = a.shape
    nby, nbx = -(-h // block), -(-w // block)
    ph, pw = nby * block - h, nbx * block - w
    a_pad = np.pad(a, ((0, ph), (0, pw)), mode="edge")
    b_pad = np.pad(b, ((search, search + ph), (search, search + pw)), mode="edge")
    shifts = sorted(
        ((dy, dx) for dy in range(-search, search + 1) for dx in range(-search, search + 1)),
        key=lambda s: (abs(s[0]) + abs(s[1]), s),
    )
    costs = np.empty((len(shifts), nby, nbx))
    for i, (dy, dx) in enumerate(shifts):
        cand = b_pad[search + dy : search + dy + a_pad.shape[0], search + dx : search + dx + a_pad.shape[1]]
        costs[i] = np.abs(cand - a_pad).reshape(nby, block, nbx, block).sum(axis=(1, 3))
    best = np.argmin(costs, axis=0)
    return np.asarray(shifts, dtype=np.float64)[best]


def _warp(img: np.ndarray, fy: np.ndarray, fx: np.ndarray) -> np.ndarray:
    h, w = img.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return map_coordinates(img, [yy - fy, xx - fx], order=1, mode="nearest")


def interpolate_pair(a: np.ndarray, b: np.ndarray, alpha: float = 0.5, kernel: str = "blend") -> np.ndarray:
    """Intermediate frame between ``a`` (alpha=0) and ``b`` (alpha=1).

    ``blend`` is a linear cross-fade. ``flow`` estimates one translation per
    8x8 block, moves ``a`` forward by ``alpha`` of it and ``b`` backward by the
    rest, then cross-fades the two warped frames. Frames are ``[C, H, W]`` or
    ``[H, W]``.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"interpolate_pair: frame shapes differ, {a.shape} vs {b.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ArgumentError(f"alpha must be in [0, 1], got {alpha}")
    if kernel not in ("blend", "flow"):
        raise ArgumentError(f"unknown interpolation kernel {kernel!r}")
    if alpha == 0.0:
        return a.copy()
    if alpha == 1.0:
        return b.copy()
    if kernel == "blend":
        return ((1.0 - alpha) * a + alpha * b).astype(a.dtype)
    planes_a = a.reshape((-1,) + a.shape[-2:]).astype(np.float64)
    planes_b = b.reshape((-1,) + b.shape[-2:]).astype(np.float64)
    h, w = a.shape[-2:]
    flow = block_flow(planes_a.mean(axis=0), planes_b.mean(axis=0))
    dense = np.repeat(np.repeat(flow, BLOCK, axis=0), BLOCK, axis=1)[:h, :w]
    fy, fx = dense[..., 0], dense[..., 1]
    out = np.empty_like(planes_a)
    for c in range(len(planes_a)):
        wa = _warp(planes_a[c], alpha * fy, alpha * fx)
        wb = _warp(planes_b[c], -(1.0 - alpha) * fy, -(1.0 - alpha) * fx)
        out[c] = (1.0 - alpha) * wa + alpha * wb
    return np.clip(out, 0.0, 1.0).reshape(a.shape).astype(a.dtype)
