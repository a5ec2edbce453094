"""Procedural untrimmed video streams with phase-structured action instances.

Each action class is a pair of parametric motions separated by a phase
switch. The background is a slowly drifting low-contrast grating texture with
per-pixel Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..exceptions import SpecError
from ..networks.labels import DEFAULT_CLASSES
from .stream import AnnotatedStream, Interval


@dataclass(frozen=True)
class ActionProgram:
    """One scheduled action instance (times relative to the instance start)."""

    class_id: int
    duration: int
    phase_switch: int
    beginning_motion: str
    finishing_motion: str
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not 0 < self.phase_switch < self.duration:
            raise SpecError(f"phase switch {self.phase_switch} outside (0, {self.duration})")
        if self.beginning_motion == self.finishing_motion:
            raise SpecError("beginning and finishing motions must differ")


MOTIONS = {
    "expand_contract": ("expand", "contract"),
    "sweep_left_right": ("sweep_left", "sweep_right"),
    "brighten_dim": ("brighten", "dim"),
}


@dataclass(frozen=True)
class StreamSpec:
    num_instances: int = 3
    classes: tuple[str, ...] = DEFAULT_CLASSES
    duration_range: tuple[int, int] = (24, 96)
    gap_range: tuple[int, int] = (16, 48)
    noise_level: float = 0.03
    seed: int = 0
    length: int | None = None
    frame_size: tuple[int, int] = (32, 32)
    stream_id: str | None = None

    def __post_init__(self):
        for name in ("classes", "duration_range", "gap_range", "frame_size"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        lo, hi = self.duration_range
        if not 2 <= lo <= hi:
            raise SpecError(f"invalid duration range {self.duration_range}")
        if not 0 <= self.gap_range[0] <= self.gap_range[1]:
            raise SpecError(f"invalid gap range {self.gap_range}")
        unknown = [c for c in self.classes if c not in MOTIONS]
        if unknown:
            raise SpecError(f"no motion program for classes {unknown}")
        if self.num_instances < 0:
            raise SpecError("num_instances must be non-negative")


# -- rendering ----------------------------------------------------------------------

def _background(rng: np.random.Generator, length: int, size: tuple[int, int]) -> np.ndarray:
    h, w = size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    yy /= h
    xx /= w
    frames = np.full((length, h, w), 0.35)
    t = np.arange(length)[:, None, None]
    for _ in range(3):
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(1.0, 3.0)
        speed = rng.uniform(0.005, 0.02) * rng.choice([-1, 1])
        phase = rng.uniform(0, 1)
        proj = xx * np.cos(theta) + yy * np.sin(theta)
        frames += 0.05 * np.sin(2 * np.pi * (freq * proj[None] + phase + speed * t))
    return frames


def _soft_disk(yy, xx, cy, cx, r):
    d = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    return np.clip(r - d + 0.5, 0.0, 1.0)


def _soft_box(yy, xx, y0, y1, x0, x1):
    my = np.clip(np.minimum(yy - y0 + 0.5, y1 - yy + 0.5), 0.0, 1.0)
    mx = np.clip(np.minimum(xx - x0 + 0.5, x1 - xx + 0.5), 0.0, 1.0)
    return my * mx


def _instance_params(rng: np.random.Generator, cls: str, size: tuple[int, int]) -> dict:
    h, w = size
    if cls == "expand_contract":
        return {"cy": rng.uniform(0.35, 0.65) * h, "cx": rng.uniform(0.35, 0.65) * w,
                "r_min": rng.uniform(1.5, 2.5), "r_max": rng.uniform(0.25, 0.32) * min(h, w),
                "level": rng.uniform(0.85, 0.95)}
    if cls == "sweep_left_right":
        return {"cy": rng.uniform(0.4, 0.6) * h, "half_h": rng.uniform(0.2, 0.3) * h,
                "x_left": rng.uniform(0.1, 0.2) * w, "x_right": rng.uniform(0.8, 0.9) * w,
                "half_w": 2.0, "level": rng.uniform(0.85, 0.95)}
    return {"cy": rng.uniform(0.35, 0.65) * h, "cx": rng.uniform(0.35, 0.65) * w,
            "half": rng.uniform(0.17, 0.22) * min(h, w), "lo": rng.uniform(0.15, 0.25),
            "hi": rng.uniform(0.85, 0.95)}


def render_action(frame: np.ndarray, program: ActionProgram, u: int, yy, xx) -> np.ndarray:
    """Draw frame ``u`` (0-based within the instance) of ``program`` over ``frame``."""
    p = program.params
    if u < program.phase_switch:
        progress = (u + 0.5) / program.phase_switch
        rising = True
    else:
        progress = (u - program.phase_switch + 0.5) / (program.duration - program.phase_switch)
        rising = False
    level = progress if rising else 1.0 - progress
    motion = program.beginning_motion if rising else program.finishing_motion
    if motion in ("expand", "contract"):
        r = p["r_min"] + (p["r_max"] - p["r_min"]) * level
        mask = _soft_disk(yy, xx, p["cy"], p["cx"], r)
        return frame * (1 - mask) + p["level"] * mask
    if motion in ("sweep_left", "sweep_right"):
        # sweep left first (right -> left), then back to the right
        x = p["x_right"] - (p["x_right"] - p["x_left"]) * (progress if rising else 1.0 - progress)
        mask = _soft_box(yy, xx, p["cy"] - p["half_h"], p["cy"] + p["half_h"], x - p["half_w"], x + p["half_w"])
        return frame * (1 - mask) + p["level"] * mask
    alpha = p["lo"] + (p["hi"] - p["lo"]) * level
    mask = _soft_box(yy, xx, p["cy"] - p["half"], p["cy"] + p["half"], p["cx"] - p["half"], p["cx"] + p["half"])
    return frame * (1 - mask * alpha) + 0.95 * mask * alpha


# -- scheduling ----------------------------------------------------------------------

def _schedule(spec: StreamSpec, rng: np.random.Generator) -> tuple[list[int], list[int], int]:
    n = spec.num_instances
    durations = [int(rng.integers(spec.duration_range[0], spec.duration_range[1] + 1)) for _ in range(n)]
    gap_lo, gap_hi = spec.gap_range
    if spec.length is None:
        gaps = [int(rng.integers(gap_lo, gap_hi + 1)) for _ in range(n + 1)]
        return durations, gaps, sum(durations) + sum(gaps)
    slack = spec.length - sum(durations) - (n + 1) * gap_lo
    if slack < 0:
        raise SpecError(
            f"{n} instances of total length {sum(durations)} plus {n + 1} gaps of >= {gap_lo} "
            f"do not fit in {spec.length} frames"
        )
    extra = rng.multinomial(slack, np.full(n + 1, 1.0 / (n + 1))) if slack else np.zeros(n + 1, int)
    gaps = [gap_lo + int(e) for e in extra]
    return durations, gaps, spec.length


def generate_stream(spec: StreamSpec) -> AnnotatedStream:
    """Render one annotated stream; bit-identical for equal specs."""
    rng = np.random.default_rng(spec.seed)
    durations, gaps, length = _schedule(spec, rng)
    h, w = spec.frame_size
    frames = _background(rng, length, spec.frame_size)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    intervals, switches, programs = [], [], []
    t = gaps[0]
    for i, dur in enumerate(durations):
        cid = int(rng.integers(len(spec.classes)))
        cls = spec.classes[cid]
        switch = int(np.clip(round(dur * rng.uniform(0.35, 0.65)), 1, dur - 1))
        prog = ActionProgram(cid, dur, switch, *MOTIONS[cls], params=_instance_params(rng, cls, spec.frame_size))
        for u in range(dur):
            frames[t + u] = render_action(frames[t + u], prog, u, yy, xx)
        intervals.append(Interval(t, t + dur, cid))
        switches.append(t + switch)
        programs.append(prog)
        t += dur + gaps[i + 1]
    frames += rng.normal(0.0, spec.noise_level, size=frames.shape)
    frames = np.clip(frames, 0.0, 1.0).astype(np.float32)[:, None]
    sid = spec.stream_id or f"synth-{spec.seed}"
    stream = AnnotatedStream(frames, intervals, switches, sid, classes=spec.classes)
    stream.extras["programs"] = programs
    return stream


def generate_corpus(num_streams: int, seed: int = 0, prefix: str = "s", instance_range=(2, 4), **spec_kw) -> list[AnnotatedStream]:
    """``num_streams`` streams with independent seeds spawned from ``seed``."""
    children = np.random.SeedSequence(seed).spawn(num_streams)
    picker = np.random.default_rng(seed)
    streams = []
    for i, child in enumerate(children):
        n = int(picker.integers(instance_range[0], instance_range[1] + 1))
        stream_seed = int(child.generate_state(1)[0])
        spec = StreamSpec(num_instances=n, seed=stream_seed, stream_id=f"{prefix}{i:04d}", **spec_kw)
        streams.append(generate_stream(spec))
    return streams


def static_stream(length: int, frame_size=(32, 32), value: float | None = None, seed: int = 0) -> AnnotatedStream:
    """A background-only stream whose frames are all identical (no drift, no noise)."""
    rng = np.random.default_rng(seed)
    base = _background(rng, 1, frame_size)[0] if value is None else np.full(frame_size, value)
    frames = np.repeat(base[None, None].astype(np.float32), length, axis=0)
    return AnnotatedStream(frames, [], [], f"static-{seed}")


__all__ = ["ActionProgram", "MOTIONS", "StreamSpec", "generate_corpus", "generate_stream", "static_stream"]
