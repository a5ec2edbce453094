"""Causal online detection: window buffering, dual-pass features, detector stepping, events.

Every ``test_stride`` frames (once ``tau`` frames are buffered) the window
``I[t-15..t]`` goes through the PR and AR networks. The F2G network then
extends the last 8 real frames with 8 generated ones and that second window is
passed through PR and AR again. The four fc7 vectors are concatenated in
:data:`~streamloc.networks.FEATURE_ORDER` and fed to one detector step.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .data.stream import AnnotatedStream
from .events import DetectionEvent
from .exceptions import ConfigError, DimensionError, StateError
from .networks import C3D, F2G, Detector
from .networks.detector import concat_features
from .tensor import softmax

ACTION = 1
BATCH = 16


@dataclass(frozen=True)
class PipelineConfig:
    tau: int = 16
    test_stride: int = 8
    train_stride: int = 16
    horizon: int = 8
    use_f2g: bool = True
    serial_cascade: bool = False
    oracle_future: bool = False
    min_event_windows: int = 1

    def __post_init__(self):
        if self.tau < 2 or self.tau % 2:
            raise ConfigError(f"tau must be an even integer >= 2, got {self.tau}")
        if self.test_stride != self.tau // 2:
            raise ConfigError(f"test_stride must be tau/2 = {self.tau // 2}, got {self.test_stride}")
        if self.horizon != self.tau // 2:
            raise ConfigError(f"horizon must be tau/2 = {self.tau // 2}, got {self.horizon}")
        if self.train_stride < 1 or self.min_event_windows < 1:
            raise ConfigError("train_stride and min_event_windows must be positive")

    @property
    def causal(self) -> bool:
        return not self.oracle_future

    @property
    def needs_f2g(self) -> bool:
        return self.use_f2g and not self.oracle_future

    @property
    def uses_future(self) -> bool:
        return self.use_f2g or self.oracle_future


@dataclass
class Networks:
    """The four networks of one pipeline; ``f2g`` may be ``None`` when unused."""

    pr: C3D
    ar: C3D
    detector: Detector
    f2g: F2G | None = None

    def check(self, config: PipelineConfig) -> None:
        needed = {"pr": self.pr, "ar": self.ar, "detector": self.detector}
        if config.needs_f2g:
            needed["f2g"] = self.f2g
        for name, net in needed.items():
            if net is None:
                raise StateError(f"pipeline needs a {name} network")
            if not net.trained:
                raise StateError(f"{name} network is untrained; train it or load a checkpoint first")
        f = self.pr.config.feature_dim
        if self.ar.config.feature_dim != f or self.detector.config.feature_dim != f:
            raise DimensionError("PR, AR and detector feature dimensions differ")

    @property
    def num_classes(self) -> int:
        return self.ar.config.out_dim // 2


@dataclass
class Counters:
    pr_forwards: int = 0
    ar_forwards: int = 0
    f2g_calls: int = 0


@dataclass(frozen=True)
class WindowPrediction:
    t: int
    label: int
    probs: np.ndarray

    def to_json(self) -> dict:
        return {"t": self.t, "label": self.label, "probs": [round(float(p), 6) for p in self.probs]}


class WindowBuffer:
    """Ring buffer of the latest ``tau`` frames; ``t`` is the index of the newest frame."""

    def __init__(self, tau: int = 16):
        self.tau = tau
        self._buf: np.ndarray | None = None
        self.t = -1

    def push(self, frame: np.ndarray) -> int:
        frame = np.asarray(frame)
        if self._buf is None:
            self._buf = np.zeros((self.tau,) + frame.shape, dtype=frame.dtype)
        elif frame.shape != self._buf.shape[1:]:
            raise DimensionError(f"frame shape {frame.shape} differs from buffered {self._buf.shape[1:]}")
        self.t += 1
        self._buf[self.t % self.tau] = frame
        return self.t

    @property
    def ready(self) -> bool:
        return self.t >= self.tau - 1

    def window(self) -> np.ndarray:
        """Frames ``t - tau + 1 .. t`` oldest first."""
        if not self.ready:
            raise StateError(f"only {self.t + 1} of {self.tau} frames buffered")
        order = (np.arange(self.t + 1, self.t + 1 + self.tau)) % self.tau
        return self._buf[order].copy()


def gather_windows(frames: np.ndarray, starts, tau: int = 16) -> np.ndarray:
    """``[N, tau, ...]`` windows beginning at ``starts``."""
    starts = np.asarray(starts, dtype=np.int64)
    if len(starts) == 0:
        return np.zeros((0, tau) + frames.shape[1:], dtype=frames.dtype)
    return frames[starts[:, None] + np.arange(tau)]


def future_frames(frames: np.ndarray, t: int, horizon: int) -> np.ndarray:
    """True frames ``t+1 .. t+horizon``; past the stream end the last frame repeats."""
    idx = np.minimum(np.arange(t + 1, t + 1 + horizon), len(frames) - 1)
    return frames[idx]


def window_features(networks: Networks, config: PipelineConfig, windows: np.ndarray,
                    futures: np.ndarray | None = None, counters: Counters | None = None) -> np.ndarray:
    """``[N, tau, C, H, W]`` windows -> ``[N, 4F]`` detector inputs.

    ``futures`` (``[N, horizon, C, H, W]``) is used only in oracle mode.
    """
    counters = counters if counters is not None else Counters()
    n = len(windows)
    f = networks.pr.config.feature_dim
    dtype = networks.detector.dtype
    out = np.zeros((n, 4 * f), dtype=dtype)
    for lo in range(0, n, BATCH):
        w = windows[lo : lo + BATCH]
        pr_real, ar_real = _pair(networks, config, w, counters)
        zeros = np.zeros_like(pr_real)
        pr_fut, ar_fut = zeros, zeros
        if config.uses_future:
            if config.oracle_future:
                if futures is None:
                    raise StateError("oracle_future mode needs the true future frames")
                gen = futures[lo : lo + BATCH]
            else:
                gen = networks.f2g.batch_generate(w)
                counters.f2g_calls += len(w)
            extended = np.concatenate([w[:, config.tau - config.horizon :], gen.astype(w.dtype)], axis=1)
            pr_fut, ar_fut = _pair(networks, config, extended, counters)
        out[lo : lo + BATCH] = concat_features(pr_real, pr_fut, ar_real, ar_fut)
    return out


def _pair(networks: Networks, config: PipelineConfig, w: np.ndarray, counters: Counters):
    pr_logits, pr_feat = networks.pr.batch_forward(w)
    counters.pr_forwards += len(w)
    ar_feat = np.zeros_like(pr_feat)
    if config.serial_cascade:
        keep = np.flatnonzero(np.argmax(pr_logits, axis=1) == ACTION)
    else:
        keep = np.arange(len(w))
    if len(keep):
        _, feat = networks.ar.batch_forward(w[keep])
        ar_feat[keep] = feat
        counters.ar_forwards += len(keep)
    return pr_feat, ar_feat


@dataclass
class FeatureParts:
    """Per-window PR logits and fc7 vectors of PR and AR for one pass."""

    pr_logits: np.ndarray
    pr_feat: np.ndarray
    ar_feat: np.ndarray

    def take(self, idx) -> "FeatureParts":
        return FeatureParts(self.pr_logits[idx], self.pr_feat[idx], self.ar_feat[idx])


def compute_parts(networks: Networks, windows: np.ndarray) -> FeatureParts:
    """PR and AR on every window (no cascade gating), in mini-batches."""
    parts = [], [], []
    for lo in range(0, len(windows), BATCH):
        w = windows[lo : lo + BATCH]
        logits, pr_feat = networks.pr.batch_forward(w)
        _, ar_feat = networks.ar.batch_forward(w)
        for acc, v in zip(parts, (logits, pr_feat, ar_feat)):
            acc.append(v)
    return FeatureParts(*(np.concatenate(a) for a in parts))


def extend_windows(networks: Networks, config: PipelineConfig, windows: np.ndarray,
                   futures: np.ndarray | None = None) -> np.ndarray:
    """Last ``horizon`` real frames followed by generated (or, in oracle mode, true) ones."""
    if config.oracle_future:
        gen = futures
    else:
        gen = np.concatenate([networks.f2g.batch_generate(windows[lo : lo + BATCH])
                              for lo in range(0, len(windows), BATCH)])
    return np.concatenate([windows[:, config.tau - config.horizon :], gen.astype(windows.dtype)], axis=1)


def assemble_features(real: FeatureParts, future: FeatureParts | None, serial_cascade: bool) -> np.ndarray:
    """Detector inputs from precomputed parts; equivalent to :func:`window_features`."""

    def gated(parts: FeatureParts) -> np.ndarray:
        if not serial_cascade:
            return parts.ar_feat
        keep = np.argmax(parts.pr_logits, axis=1) == ACTION
        return parts.ar_feat * keep[:, None]

    zeros = np.zeros_like(real.pr_feat)
    if future is None:
        return concat_features(real.pr_feat, zeros, gated(real), zeros)
    return concat_features(real.pr_feat, future.pr_feat, gated(real), gated(future))


class OnlineDetector:
    """Sequential state machine turning a frame stream into window predictions."""

    def __init__(self, networks: Networks, config: PipelineConfig = PipelineConfig()):
        networks.check(config)
        self.networks = networks
        self.config = config
        self.counters = Counters()
        self.reset()

    def reset(self) -> None:
        self.buffer = WindowBuffer(self.config.tau)
        self.state = self.networks.detector.initial_state(1)

    def due(self) -> bool:
        c = self.config
        return self.buffer.ready and (self.buffer.t - (c.tau - 1)) % c.test_stride == 0

    def step(self, frame: np.ndarray, future: np.ndarray | None = None) -> WindowPrediction | None:
        """Push one frame; returns a prediction on window boundaries, else ``None``.

        ``future`` (true frames ``t+1..t+horizon``) is read only in oracle mode.
        """
        t = self.buffer.push(frame)
        if not self.due():
            return None
        window = self.buffer.window()[None]
        fut = None if future is None else np.asarray(future)[None]
        feats = window_features(self.networks, self.config, window, fut, self.counters)
        return self._detect(t, feats[0])

    def _detect(self, t: int, feats: np.ndarray) -> WindowPrediction:
        logits, self.state = self.networks.detector.forward_step(feats, self.state)
        probs = softmax(logits[None])[0]
        return WindowPrediction(t, int(np.argmax(probs)), probs)


def prediction_times(length: int, config: PipelineConfig = PipelineConfig()) -> range:
    if length < config.tau:
        return range(0)
    return range(config.tau - 1, length, config.test_stride)


def events_from_predictions(predictions, num_classes: int, config: PipelineConfig = PipelineConfig(),
                            stream_id: str = "") -> list[DetectionEvent]:
    """Merge runs of equal action labels; window at ``t`` claims frames ``t-7 .. t``."""
    claim = config.test_stride
    events = []
    run: list[WindowPrediction] = []

    def close():
        if run and len(run) >= config.min_event_windows:
            k = run[0].label
            conf = float(np.mean([p.probs[k] for p in run]))
            events.append(DetectionEvent(k, max(0, run[0].t - claim + 1), run[-1].t + 1, conf, stream_id))

    for p in predictions:
        if run and p.label != run[0].label:
            close()
            run = []
        if p.label != num_classes:
            run.append(p)
    close()
    return events


def per_frame_scores(predictions, length: int, num_classes: int, config: PipelineConfig = PipelineConfig()) -> np.ndarray:
    """``[length, K+1]``: each frame takes the probabilities of the latest window claiming it."""
    scores = np.zeros((length, num_classes + 1))
    for p in predictions:
        scores[max(0, p.t - config.test_stride + 1) : p.t + 1] = p.probs
    return scores


@dataclass
class StreamResult:
    stream_id: str
    events: list[DetectionEvent]
    window_predictions: list[WindowPrediction]
    per_frame_scores: np.ndarray
    config: PipelineConfig
    counters: Counters = field(default_factory=Counters)

    def to_json(self) -> dict:
        return {
            "stream_id": self.stream_id,
            "config": asdict(self.config),
            "events": [e.to_json() for e in self.events],
            "causal": self.config.causal,
        }


def run_stream(stream: AnnotatedStream, config: PipelineConfig, networks: Networks,
               batched: bool = False, on_prediction=None) -> StreamResult:
    """One pass over ``stream``.

    ``batched`` computes all window features in mini-batches before stepping the
    detector; each window still sees only its own frames, so the result matches
    the frame-by-frame path up to floating-point summation order.
    """
    frames = stream.frames
    k = networks.num_classes
    if batched:
        det = OnlineDetector(networks, config)
        times = list(prediction_times(len(frames), config))
        windows = gather_windows(frames, np.asarray(times, dtype=np.int64) - (config.tau - 1), config.tau)
        futures = None
        if config.oracle_future and times:
            futures = np.stack([future_frames(frames, t, config.horizon) for t in times])
        feats = window_features(networks, config, windows, futures, det.counters) if times else []
        preds = []
        for t, f in zip(times, feats):
            preds.append(det._detect(t, f))
            if on_prediction:
                on_prediction(preds[-1])
    else:
        det = OnlineDetector(networks, config)
        preds = []
        for t, frame in enumerate(frames):
            fut = future_frames(frames, t, config.horizon) if config.oracle_future else None
            p = det.step(frame, fut)
            if p is not None:
                preds.append(p)
                if on_prediction:
                    on_prediction(p)
    events = events_from_predictions(preds, k, config, stream.stream_id)
    scores = per_frame_scores(preds, len(frames), k, config)
    return StreamResult(stream.stream_id, events, preds, scores, config, det.counters)
