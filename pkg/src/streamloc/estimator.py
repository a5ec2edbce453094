"""scikit-learn style estimators over annotated streams.

``X`` is always a sequence of :class:`~streamloc.data.AnnotatedStream` (a bare
``[T, C, H, W]`` or ``[T, H, W]`` array is accepted for prediction). Targets
live inside the streams, so ``y`` is ignored.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .ablation import evaluate_detector
from .augment import slow_down, speed_up
from .config import RunConfig
from .data.stream import AnnotatedStream
from .evaluation import map_at
from .exceptions import ArgumentError, DimensionError, StateError
from .pipeline import Networks, run_stream
from .training import Corpus, TrainLog, build_feature_bank, train_ar, train_det, train_f2g, train_pr


class NotTrainedError(StateError, NotFittedError):
    """Prediction was requested before :meth:`fit`."""


def check_frames(frames, frame_shape: tuple | None = None) -> np.ndarray:
    """Validate one frame array and return it as float32 ``[T, C, H, W]``."""
    a = np.asarray(frames)
    if a.ndim == 3:
        a = a[:, None]
    if a.ndim != 4:
        raise DimensionError(f"frames must be [T, C, H, W] or [T, H, W], got shape {a.shape}")
    if not np.issubdtype(a.dtype, np.number):
        raise ArgumentError(f"frames must be numeric, got dtype {a.dtype}")
    if not np.all(np.isfinite(a)):
        raise ArgumentError("frames contain NaN or infinite values")
    if frame_shape is not None and tuple(a.shape[1:]) != tuple(frame_shape):
        raise DimensionError(f"frame shape {a.shape[1:]} differs from the fitted {tuple(frame_shape)}")
    return np.ascontiguousarray(a, dtype=np.float32)


def check_streams(X, frame_shape: tuple | None = None, allow_arrays: bool = False) -> list[AnnotatedStream]:
    """Validate a stream collection; arrays become unannotated streams when allowed."""
    if isinstance(X, (AnnotatedStream, np.ndarray)):
        X = [X]
    streams = []
    for i, s in enumerate(X):
        if isinstance(s, AnnotatedStream):
            check_frames(s.frames, frame_shape)
            streams.append(s)
        elif allow_arrays:
            streams.append(AnnotatedStream(check_frames(s, frame_shape), [], [], f"x{i:04d}"))
        else:
            raise ArgumentError(f"item {i} is {type(s).__name__}, expected an AnnotatedStream")
    if not streams:
        raise ArgumentError("no streams given")
    shapes = {s.frames.shape[1:] for s in streams}
    if len(shapes) > 1:
        raise DimensionError(f"streams have different frame shapes: {sorted(shapes)}")
    return streams


class TemporalAugmenter(TransformerMixin, BaseEstimator):
    """Appends a ``speed``-times faster and a 2x slower copy of each stream."""

    def __init__(self, speed: int = 2, kernel: str = "flow"):
        self.speed = speed
        self.kernel = kernel

    def fit(self, X, y=None):
        check_streams(X)
        return self

    def transform(self, X):
        streams = check_streams(X)
        return streams + [speed_up(s, self.speed) for s in streams] + [slow_down(s, 2, self.kernel) for s in streams]


class OnlineActionLocalizer(BaseEstimator):
    """PR + AR + F2G + detector, trained phase by phase and run causally.

    Parameters mirror :class:`~streamloc.pipeline.PipelineConfig` mode flags;
    everything else comes from ``config`` (a :class:`~streamloc.config.RunConfig`).
    """

    def __init__(self, config: RunConfig | None = None, use_f2g: bool = True, serial_cascade: bool = False,
                 oracle_future: bool = False, augment: bool = True, seed: int = 0, batched: bool = True):
        self.config = config
        self.use_f2g = use_f2g
        self.serial_cascade = serial_cascade
        self.oracle_future = oracle_future
        self.augment = augment
        self.seed = seed
        self.batched = batched

    # -- helpers ----------------------------------------------------------------------
    def _run_config(self) -> RunConfig:
        return (self.config or RunConfig()).with_seed(self.seed)

    def _pipeline_config(self):
        return dataclasses.replace(self._run_config().pipeline, use_f2g=self.use_f2g,
                                   serial_cascade=self.serial_cascade, oracle_future=self.oracle_future)

    def _check_fitted(self) -> None:
        if not hasattr(self, "networks_"):
            raise NotTrainedError("this OnlineActionLocalizer is not trained; call fit first")

    # -- estimator API ----------------------------------------------------------------
    def fit(self, X, y=None, X_val=None):
        """Train all networks on ``X``; ``X_val`` drives checkpoint selection (defaults to ``X``)."""
        cfg = self._run_config()
        train = check_streams(X)
        val = check_streams(X_val) if X_val is not None else train
        classes = tuple(cfg.data.classes)
        if X_val is None:
            val = [dataclasses.replace(s, stream_id=f"{s.stream_id}@val") for s in val]
        corpus = Corpus(train, val, classes)
        k = corpus.num_classes
        pcfg = self._pipeline_config()
        cls_corpus = corpus.augmented(cfg.augment.kernel) if self.augment else corpus
        self.logs_ = TrainLog()
        pr = train_pr(cls_corpus, cfg.train.pr, cfg.c3d_for(2), pcfg.tau, pcfg.train_stride, self.logs_)
        ar = train_ar(cls_corpus, cfg.train.ar, cfg.c3d_for(2 * k), pcfg.tau, pcfg.train_stride, self.logs_)
        f2g = train_f2g(corpus, cfg.train.f2g, cfg.f2g_config(), self.logs_) if pcfg.needs_f2g else None
        nets = Networks(pr.network, ar.network, None, f2g.network if f2g else None)
        banks = [build_feature_bank(s, nets, pcfg, stride, real_only=not pcfg.uses_future)
                 for s, stride in ((corpus.train, pcfg.train_stride), (corpus.val, pcfg.test_stride))]
        feats = [b.stream_features(pcfg.uses_future, pcfg.serial_cascade) for b in banks]
        upstream = {"pr": nets.pr, "ar": nets.ar, **({"f2g": nets.f2g} if nets.f2g else {})}
        det = train_det(feats[0], feats[1], k, cfg.train.det, cfg.detector_config(), upstream, self.logs_)
        nets.detector = det.network
        self.networks_ = nets
        self.classes_ = classes
        self.frame_shape_ = train[0].frames.shape[1:]
        self.val_metrics_ = evaluate_detector(det.network, feats[1], corpus.val, pcfg,
                                              cfg.ablation.thresholds, k)
        return self

    @classmethod
    def from_networks(cls, networks: Networks, config: RunConfig | None = None, **params):
        """Wrap already trained networks (for example loaded from checkpoints)."""
        est = cls(config=config, **params)
        networks.check(est._pipeline_config())
        est.networks_ = networks
        est.classes_ = tuple((config or RunConfig()).data.classes)
        est.frame_shape_ = (networks.pr.config.in_channels, *networks.pr.config.frame_size)
        return est

    def run(self, X):
        """Full :class:`~streamloc.pipeline.StreamResult` per stream."""
        self._check_fitted()
        streams = check_streams(X, self.frame_shape_, allow_arrays=True)
        return [run_stream(s, self._pipeline_config(), self.networks_, batched=self.batched) for s in streams]

    def predict(self, X):
        """Detected events per stream."""
        return [r.events for r in self.run(X)]

    def predict_proba(self, X):
        """Per-frame ``[T, K+1]`` class scores per stream."""
        return [r.per_frame_scores for r in self.run(X)]

    def score(self, X, y=None, theta: float = 0.5) -> float:
        """Interval mAP at IoU ``theta`` on annotated streams."""
        streams = check_streams(X, self.frame_shape_)
        results = self.run(streams)
        events = {s.stream_id: r.events for s, r in zip(streams, results)}
        gts = {s.stream_id: s.intervals for s in streams}
        return map_at(events, gts, (theta,), len(self.classes_))[float(theta)]
