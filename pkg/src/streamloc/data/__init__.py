"""Synthetic untrimmed streams, window labels and dataset files."""

from .io import read_dataset, read_frames, read_thumos_annotations, write_dataset, write_frames
from .labels import (
    ACTION,
    BACKGROUND,
    derive_ar_labels,
    derive_det_labels,
    derive_pr_labels,
    is_action_window,
    window_starts,
)
from .stream import AnnotatedStream, Interval
from .synth import ActionProgram, StreamSpec, generate_corpus, generate_stream, static_stream

__all__ = [
    "ACTION",
    "ActionProgram",
    "AnnotatedStream",
    "BACKGROUND",
    "Interval",
    "StreamSpec",
    "derive_ar_labels",
    "derive_det_labels",
    "derive_pr_labels",
    "generate_corpus",
    "generate_stream",
    "is_action_window",
    "read_dataset",
    "read_frames",
    "read_thumos_annotations",
    "static_stream",
    "window_starts",
    "write_dataset",
    "write_frames",
]
