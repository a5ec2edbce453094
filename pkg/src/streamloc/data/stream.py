from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..exceptions import ArgumentError


@dataclass(frozen=True, order=True)
class Interval:
    """Half-open frame span ``[start_frame, end_frame)`` of one action instance."""

    start_frame: int
    end_frame: int
    class_id: int = 0

    def __post_init__(self):
        if self.start_frame < 0 or self.end_frame <= self.start_frame:
            raise ArgumentError(f"degenerate interval [{self.start_frame}, {self.end_frame})")

    @property
    def length(self) -> int:
        return self.end_frame - self.start_frame


@dataclass
class AnnotatedStream:
    """An untrimmed ``[T, C, H, W]`` frame sequence with its ground truth."""

    frames: np.ndarray
    intervals: list[Interval]
    phase_switches: list[int]
    stream_id: str = "stream"
    provenance: dict | None = None
    classes: tuple[str, ...] | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.phase_switches) != len(self.intervals):
            raise ArgumentError("one phase switch per interval is required")
        prev_end = 0
        for iv in self.intervals:
            if iv.start_frame < prev_end:
                raise ArgumentError(f"{self.stream_id}: intervals overlap or are unsorted at {iv}")
            if iv.end_frame > len(self.frames):
                raise ArgumentError(f"{self.stream_id}: interval {iv} exceeds stream length {len(self.frames)}")
            prev_end = iv.end_frame

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def length(self) -> int:
        return len(self.frames)

    def frame_labels(self, background: int) -> np.ndarray:
        """Per-frame class id, ``background`` outside every interval."""
        out = np.full(len(self.frames), background, dtype=np.int64)
        for iv in self.intervals:
            out[iv.start_frame : iv.end_frame] = iv.class_id
        return out

    def class_counts(self, num_classes: int) -> np.ndarray:
        counts = np.zeros(num_classes, dtype=np.int64)
        for iv in self.intervals:
            counts[iv.class_id] += 1
        return counts
