"""Phase-wise training of the PR, AR, F2G and detector networks."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import augment_corpus
from .data.labels import derive_ar_labels, derive_det_labels, derive_pr_labels, is_action_window, window_starts
from .data.stream import AnnotatedStream
from .exceptions import ArgumentError, ConfigError, DataError, StateError
from .networks import C3D, F2G, Detector, DetectorConfig, F2GConfig, C3DConfig, ar_network, pr_network
from .networks.c3d import frames_to_input
from .networks.labels import BEGINNING, FINISHING
from .pipeline import (
    FeatureParts,
    Networks,
    PipelineConfig,
    assemble_features,
    compute_parts,
    extend_windows,
    future_frames,
    gather_windows,
)
from .tensor import RMSProp, SGD, Tensor, no_grad, one_hot, softmax_cross_entropy
from .tensor.autograd import square, tabs, tmean

log = logging.getLogger(__name__)

SEQ_LEN = 8


# -- schedules -----------------------------------------------------------------------

@dataclass(frozen=True)
class PhaseSchedule:
    """Optimizer and budget for one classifier phase.

    ``samples_per_epoch`` caps the windows drawn per epoch (0 = all of them),
    which keeps augmented and plain corpora on the same step budget.
    """

    optimizer: str = "sgd"
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    rms_decay: float = 0.9
    epochs: int = 30
    batch_size: int = 16
    samples_per_epoch: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("sgd", "rmsprop"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("epochs, batch_size and lr must be positive")

    def make_optimizer(self, params):
        if self.optimizer == "sgd":
            return SGD(params, self.lr, self.momentum, self.weight_decay)
        return RMSProp(params, self.lr, self.rms_decay)


@dataclass(frozen=True)
class F2GSchedule:
    lr: float = 1e-3
    iterations: int = 5000
    batch_size: int = 8
    val_every: int = 250
    val_pairs: int = 64
    seed: int = 0


@dataclass(frozen=True)
class DetSchedule:
    optimizer: str = "rmsprop"
    lr: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 5e-4
    rms_decay: float = 0.9
    cycles: int = 3
    epochs_per_cycle: int = 10
    batch_size: int = 16
    seed: int = 0

    def make_optimizer(self, params):
        return PhaseSchedule(self.optimizer, self.lr, self.momentum, self.weight_decay, self.rms_decay,
                             seed=self.seed).make_optimizer(params)


@dataclass(frozen=True)
class TrainSchedule:
    pr: PhaseSchedule = PhaseSchedule()
    ar: PhaseSchedule = PhaseSchedule()
    f2g: F2GSchedule = F2GSchedule()
    det: DetSchedule = DetSchedule()
    augment: bool = True
    augment_kernel: str = "flow"


@dataclass
class Corpus:
    """Disjoint train/val splits sharing one class list."""

    train: list[AnnotatedStream]
    val: list[AnnotatedStream]
    classes: tuple[str, ...]

    def __post_init__(self):
        overlap = {s.stream_id for s in self.train} & {s.stream_id for s in self.val}
        if overlap:
            raise DataError(f"train and val splits share stream ids: {sorted(overlap)[:5]}")

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def augmented(self, kernel: str = "flow") -> "Corpus":
        return Corpus(augment_corpus(self.train, kernel), self.val, self.classes)


# -- logging -------------------------------------------------------------------------

class TrainLog:
    """Line-delimited JSON records ``{phase, epoch, step, loss, val_metric, seed}``."""

    def __init__(self, path=None):
        self.records: list[dict] = []
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def add(self, phase: str, epoch: int, step: int, loss: float, val_metric, seed: int, **extra) -> dict:
        rec = {"phase": phase, "epoch": epoch, "step": step, "loss": None if loss is None else float(loss),
               "val_metric": None if val_metric is None else float(val_metric), "seed": seed, **extra}
        self.records.append(rec)
        if self.path:
            with self.path.open("a") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        log.info("%s epoch %d step %d loss %s val %s", phase, epoch, step, loss, val_metric)
        return rec


@dataclass
class TrainResult:
    network: object
    log: TrainLog
    best_val: float
    extras: dict = field(default_factory=dict)


# -- class weights -------------------------------------------------------------------

def class_weights(counts) -> np.ndarray:
    """``w_k = 1 - |S_k| / (2 max_j |S_j|)``; the largest class gets exactly 0.5."""
    c = np.asarray(counts, dtype=np.float64)
    if c.ndim != 1 or len(c) == 0 or np.any(c < 0):
        raise ArgumentError(f"class counts must be a non-empty vector of non-negative numbers, got {counts}")
    top = c.max()
    if top <= 0:
        raise ArgumentError("class counts are all zero")
    return 1.0 - c / (2.0 * top)


# -- window datasets -----------------------------------------------------------------

@dataclass
class WindowSet:
    streams: list[AnnotatedStream]
    index: np.ndarray   # [N, 2] (stream position, window start)
    labels: np.ndarray  # [N]
    tau: int = 16

    def __len__(self) -> int:
        return len(self.labels)

    def windows(self, rows) -> np.ndarray:
        rows = np.asarray(rows)
        return np.stack([self.streams[i].frames[s : s + self.tau] for i, s in self.index[rows]])


def pr_window_set(streams, tau: int = 16, stride: int = 16) -> WindowSet:
    idx, lab = [], []
    for i, s in enumerate(streams):
        for st in window_starts(len(s), tau, stride):
            idx.append((i, st))
            lab.append(derive_pr_labels(s, st, tau))
    return WindowSet(list(streams), np.asarray(idx, dtype=np.int64).reshape(-1, 2), np.asarray(lab, dtype=np.int64), tau)


def ar_window_set(streams, num_classes: int, tau: int = 16, stride: int = 16, check: bool = True) -> WindowSet:
    idx, lab = [], []
    for i, s in enumerate(streams):
        for st in window_starts(len(s), tau, stride):
            if is_action_window(s, st, tau):
                idx.append((i, st))
                lab.append(derive_ar_labels(s, st, tau))
    lab = np.asarray(lab, dtype=np.int64)
    if check:
        names = streams[0].classes if streams and streams[0].classes else None
        for k in range(num_classes):
            for phase, pname in ((BEGINNING, "beginning"), (FINISHING, "finishing")):
                if not np.any(lab == 2 * k + phase):
                    cname = names[k] if names and k < len(names) else str(k)
                    raise DataError(f"class {cname!r} has no {pname} windows in the training split")
    return WindowSet(list(streams), np.asarray(idx, dtype=np.int64).reshape(-1, 2), lab, tau)


# -- classifier phases ---------------------------------------------------------------

def _evaluate(net: C3D, data: WindowSet, batch: int = 32) -> np.ndarray:
    preds = []
    for lo in range(0, len(data), batch):
        logits, _ = net.batch_forward(data.windows(np.arange(lo, min(lo + batch, len(data)))))
        preds.append(np.argmax(logits, axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def confusion_matrix(y_true, y_pred, n: int) -> np.ndarray:
    m = np.zeros((n, n), dtype=np.int64)
    np.add.at(m, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return m


def train_classifier(net: C3D, train: WindowSet, val: WindowSet, schedule: PhaseSchedule,
                     phase: str, train_log: TrainLog | None = None) -> TrainResult:
    """Mini-batch training with dropout; the best validation accuracy's weights are kept."""
    if len(train) == 0:
        raise DataError(f"{phase}: the training corpus has no windows")
    train_log = train_log or TrainLog()
    n_out = net.config.out_dim
    rng = np.random.default_rng(schedule.seed)
    opt = schedule.make_optimizer(net.parameters())
    best, best_state, step = -1.0, net.state_dict(), 0
    per_epoch = schedule.samples_per_epoch or len(train)
    for epoch in range(1, schedule.epochs + 1):
        order = rng.permutation(len(train))
        if per_epoch < len(train):
            order = order[:per_epoch]
        losses = []
        for lo in range(0, len(order), schedule.batch_size):
            rows = order[lo : lo + schedule.batch_size]
            x = frames_to_input(train.windows(rows), net.dtype)
            logits, _ = net.forward(x, "train", rng)
            loss = softmax_cross_entropy(logits, one_hot(train.labels[rows], n_out))
            opt.zero_grad()
            loss.backward()
            opt.step()
            step += 1
            value = loss.item()
            if not np.isfinite(value):
                raise StateError(f"{phase}: loss became non-finite at step {step}")
            losses.append(value)
        acc = float(np.mean(_evaluate(net, val) == val.labels)) if len(val) else float("nan")
        train_log.add(phase, epoch, step, float(np.mean(losses)), acc, schedule.seed,
                      first_loss=losses[0] if epoch == 1 else None)
        if len(val) == 0 or acc > best:
            best, best_state = acc, net.state_dict()
    net.load_state_dict(best_state)
    net.trained = True
    return TrainResult(net, train_log, best)


def train_pr(corpus: Corpus, schedule: PhaseSchedule = PhaseSchedule(), config: C3DConfig | None = None,
             tau: int = 16, stride: int = 16, train_log: TrainLog | None = None) -> TrainResult:
    train = pr_window_set(corpus.train, tau, stride)
    val = pr_window_set(corpus.val, tau, stride)
    net = pr_network(config, seed=schedule.seed)
    return train_classifier(net, train, val, schedule, "pr", train_log)


def train_ar(corpus: Corpus, schedule: PhaseSchedule = PhaseSchedule(), config: C3DConfig | None = None,
             tau: int = 16, stride: int = 16, train_log: TrainLog | None = None) -> TrainResult:
    k = corpus.num_classes
    if not corpus.train:
        raise DataError("ar: the training corpus is empty")
    train = ar_window_set(corpus.train, k, tau, stride)
    val = ar_window_set(corpus.val, k, tau, stride, check=False)
    net = ar_network(k, config, seed=schedule.seed)
    res = train_classifier(net, train, val, schedule, "ar", train_log)
    pred = _evaluate(net, val)
    res.extras["confusion"] = confusion_matrix(val.labels, pred, 2 * k)
    return res


# -- F2G ------------------------------------------------------------------------------

def frame_loss(pred, target) -> Tensor:
    """Mean squared error plus squared gradient-difference loss for ``[N, C, H, W]`` frames."""
    pred = pred if isinstance(pred, Tensor) else Tensor(np.asarray(pred))
    target = np.asarray(target.data if isinstance(target, Tensor) else target)
    l2 = tmean(square(pred - target))
    gy_p = tabs(pred[:, :, 1:, :] - pred[:, :, :-1, :])
    gx_p = tabs(pred[:, :, :, 1:] - pred[:, :, :, :-1])
    gy_t = np.abs(np.diff(target, axis=2))
    gx_t = np.abs(np.diff(target, axis=3))
    gdl = tmean(square(gy_p - gy_t)) + tmean(square(gx_p - gx_t))
    return l2 + gdl


def sequence_loss(preds, targets: np.ndarray) -> Tensor:
    """Mean of :func:`frame_loss` over the horizon; ``targets`` is ``[N, horizon, C, H, W]``."""
    total = None
    for h, p in enumerate(preds):
        term = frame_loss(p, targets[:, h])
        total = term if total is None else total + term
    return total * (1.0 / len(preds))


def copy_last_loss(contexts: np.ndarray, targets: np.ndarray) -> float:
    last = contexts[:, -1]
    preds = [Tensor(last) for _ in range(targets.shape[1])]
    with no_grad():
        return sequence_loss(preds, targets).item()


def _f2g_pairs(streams, n: int, rng: np.random.Generator, context: int, horizon: int):
    span = context + horizon
    eligible = [s for s in streams if len(s) >= span]
    lens = np.array([len(s) - span + 1 for s in eligible], dtype=np.float64)
    picks = rng.choice(len(eligible), size=n, p=lens / lens.sum())
    clips = np.stack([eligible[i].frames[(st := rng.integers(0, len(eligible[i]) - span + 1)) : st + span]
                      for i in picks])
    return clips[:, :context], clips[:, context:]


def train_f2g(corpus: Corpus, schedule: F2GSchedule = F2GSchedule(), config: F2GConfig | None = None,
              train_log: TrainLog | None = None) -> TrainResult:
    """SGD (no momentum) on the L2 + gradient-difference loss with recursive generation."""
    config = config or F2GConfig()
    span = config.context + config.horizon
    short = [s.stream_id for s in corpus.train if len(s) < span]
    if not corpus.train or short:
        raise DataError(f"f2g: every training stream needs at least {span} frames, too short: {short[:5]}")
    train_log = train_log or TrainLog()
    net = F2G(config, seed=schedule.seed)
    rng = np.random.default_rng(schedule.seed)
    val_rng = np.random.default_rng(schedule.seed + 7919)
    val_streams = [s for s in corpus.val if len(s) >= span] or corpus.train
    vctx, vtgt = _f2g_pairs(val_streams, schedule.val_pairs, val_rng, config.context, config.horizon)
    vctx, vtgt = vctx.astype(net.dtype), vtgt.astype(net.dtype)
    baseline = copy_last_loss(vctx, vtgt)

    def val_loss() -> float:
        out = []
        for lo in range(0, len(vctx), 16):
            gen = net.batch_generate(vctx[lo : lo + 16])
            with no_grad():
                out.append(sequence_loss([Tensor(gen[:, h]) for h in range(gen.shape[1])], vtgt[lo : lo + 16]).item()
                           * len(gen))
        return float(sum(out) / len(vctx))

    opt = SGD(net.parameters(), lr=schedule.lr, momentum=0.0, weight_decay=0.0)
    best, best_state = val_loss(), net.state_dict()
    train_log.add("f2g", 0, 0, None, best, schedule.seed, copy_last_val=baseline)
    window = []
    for it in range(1, schedule.iterations + 1):
        ctx, tgt = _f2g_pairs(corpus.train, schedule.batch_size, rng, config.context, config.horizon)
        preds = net.forward(Tensor(ctx.astype(net.dtype)))
        loss = sequence_loss(preds, tgt.astype(net.dtype))
        opt.zero_grad()
        loss.backward()
        opt.step()
        value = loss.item()
        if not np.isfinite(value):
            raise StateError(f"f2g: loss became non-finite at iteration {it}")
        window.append(value)
        if it % schedule.val_every == 0 or it == schedule.iterations:
            v = val_loss()
            train_log.add("f2g", it // schedule.val_every, it, float(np.mean(window)), v, schedule.seed,
                          copy_last_val=baseline)
            window = []
            if v < best:
                best, best_state = v, net.state_dict()
    net.load_state_dict(best_state)
    net.trained = True
    return TrainResult(net, train_log, best, {"copy_last_val": baseline,
                                              "relative_gain": (baseline - best) / baseline})


# -- detector ------------------------------------------------------------------------

@dataclass
class StreamFeatures:
    """Detector inputs and targets of the stride-spaced windows of one stream."""

    stream_id: str
    features: np.ndarray  # [W, 4F]
    labels: np.ndarray    # [W]
    times: np.ndarray     # [W] last frame index of each window

    def sequences(self, seq_len: int = SEQ_LEN) -> int:
        return len(self.labels) // seq_len


@dataclass
class FeatureBank:
    """PR/AR outputs of every window of a stream list, for the real and the future pass.

    Upstream networks are frozen during detector training, so the parts are
    computed once and any detector input (with or without future features,
    serial cascade or not) is assembled from them.
    """

    stream_ids: list[str]
    times: list[np.ndarray]
    labels: list[np.ndarray]
    real: list[FeatureParts]
    future: list[FeatureParts] | None

    def save(self, path) -> None:
        arrays = {}
        for i, sid in enumerate(self.stream_ids):
            arrays[f"{i}/times"] = self.times[i]
            arrays[f"{i}/labels"] = self.labels[i]
            for tag, parts in (("real", self.real), ("future", self.future)):
                if parts is not None:
                    for name in ("pr_logits", "pr_feat", "ar_feat"):
                        arrays[f"{i}/{tag}/{name}"] = getattr(parts[i], name)
        np.savez(path, ids=np.array(self.stream_ids), **arrays)

    @classmethod
    def load(cls, path) -> "FeatureBank":
        z = np.load(path)
        ids = [str(x) for x in z["ids"]]
        has_future = len(ids) > 0 and "0/future/pr_feat" in z.files

        def parts(i, tag):
            return FeatureParts(*(z[f"{i}/{tag}/{n}"] for n in ("pr_logits", "pr_feat", "ar_feat")))

        return cls(ids, [z[f"{i}/times"] for i in range(len(ids))], [z[f"{i}/labels"] for i in range(len(ids))],
                   [parts(i, "real") for i in range(len(ids))],
                   [parts(i, "future") for i in range(len(ids))] if has_future else None)

    def stream_features(self, use_future: bool, serial_cascade: bool) -> list[StreamFeatures]:
        out = []
        for i, sid in enumerate(self.stream_ids):
            fut = None
            if use_future:
                if self.future is None:
                    raise StateError("feature bank has no future pass")
                fut = self.future[i]
            feats = assemble_features(self.real[i], fut, serial_cascade)
            out.append(StreamFeatures(sid, feats, self.labels[i], self.times[i]))
        return out


def build_feature_bank(streams, networks: Networks, config: PipelineConfig, stride: int,
                       real_only: bool = False, real_from: "FeatureBank | None" = None) -> FeatureBank:
    """Compute parts for windows at ``stride``. ``real_from`` reuses a bank's real pass."""
    k = networks.num_classes
    ids, times, labels, real, future = [], [], [], [], []
    for i, s in enumerate(streams):
        starts = np.asarray(window_starts(len(s), config.tau, stride), dtype=np.int64)
        t = starts + config.tau - 1
        windows = gather_windows(s.frames, starts, config.tau)
        ids.append(s.stream_id)
        times.append(t)
        labels.append(np.array([derive_det_labels(s, st, k, config.tau) for st in starts], dtype=np.int64))
        real.append(real_from.real[i] if real_from is not None else compute_parts(networks, windows))
        if not real_only:
            futs = np.stack([future_frames(s.frames, tt, config.horizon) for tt in t]) if len(t) else None
            if len(t):
                future.append(compute_parts(networks, extend_windows(networks, config, windows, futs)))
            else:
                future.append(real[-1])
    return FeatureBank(ids, times, labels, real, None if real_only else future)


def detector_class_weights(features: list[StreamFeatures], num_classes: int) -> np.ndarray:
    counts = np.zeros(num_classes + 1, dtype=np.int64)
    for sf in features:
        counts += np.bincount(sf.labels, minlength=num_classes + 1)
    return class_weights(counts)


def _det_batches(features: list[StreamFeatures], order, batch_size: int):
    for lo in range(0, len(order), batch_size):
        yield [features[i] for i in order[lo : lo + batch_size]]


def detector_batch_loss(det: Detector, batch: list[StreamFeatures], weights: np.ndarray,
                        mode: str, rng, opt=None, seq_len: int = SEQ_LEN) -> list[float]:
    """Truncated BPTT over consecutive ``seq_len``-window chunks of each stream.

    State is carried (detached) from one chunk to the next within a stream; a
    stream without a full chunk left simply stops contributing. With ``opt``
    the detector is updated after every chunk.
    """
    n_chunks = [sf.sequences(seq_len) for sf in batch]
    state = det.initial_state(len(batch))
    k1 = det.config.out_dim
    dim = det.config.input_dim
    losses = []
    for j in range(max(n_chunks, default=0)):
        active = np.flatnonzero(np.asarray(n_chunks) > j)
        total = None
        for s in range(seq_len):
            pos = j * seq_len + s
            x = np.zeros((len(batch), dim), dtype=det.dtype)
            for r in active:
                x[r] = batch[r].features[pos]
            logits, state = det.step(Tensor(x), state, mode, rng)
            y = np.array([batch[r].labels[pos] for r in active])
            term = softmax_cross_entropy(logits[active], one_hot(y, k1), weights)
            total = term if total is None else total + term
        loss = total * (1.0 / seq_len)
        if opt is not None:
            opt.zero_grad()
            loss.backward()
            opt.step()
        losses.append(loss.item())
        state = Detector.detach_state(state)
    return losses


def predict_windows(det: Detector, sf: StreamFeatures) -> np.ndarray:
    """Per-window softmax probabilities, state carried over the whole stream."""
    from .tensor import softmax

    state = det.initial_state(1)
    probs = []
    for f in sf.features:
        logits, state = det.forward_step(f, state)
        probs.append(softmax(logits[None])[0])
    return np.asarray(probs).reshape(-1, det.config.out_dim)


def train_det(train_features: list[StreamFeatures], val_features: list[StreamFeatures],
              num_classes: int, schedule: DetSchedule = DetSchedule(), config: DetectorConfig | None = None,
              upstream: dict | None = None, train_log: TrainLog | None = None) -> TrainResult:
    """Weighted cross-entropy with 8-window truncated BPTT on precomputed features.

    ``upstream`` maps names to the frozen networks; their checksums are
    verified to be unchanged at the end. Missing or untrained ones raise.
    """
    upstream = upstream or {}
    for name, net in upstream.items():
        if net is None or not net.trained:
            raise StateError(f"detector training needs a trained {name} network")
    sums = {name: net.checksum() for name, net in upstream.items()}
    if not train_features or sum(sf.sequences() for sf in train_features) == 0:
        raise DataError("det: no stream has a full 8-window sequence")
    dim = train_features[0].features.shape[1]
    config = config or DetectorConfig(feature_dim=dim // 4, num_classes=num_classes)
    if config.input_dim != dim:
        raise ConfigError(f"detector input {config.input_dim} does not match feature width {dim}")
    train_log = train_log or TrainLog()
    det = Detector(config, seed=schedule.seed)
    weights = detector_class_weights(train_features, num_classes).astype(det.dtype)
    rng = np.random.default_rng(schedule.seed)
    opt = schedule.make_optimizer(det.parameters())
    best, best_state, step, epoch = -1.0, det.state_dict(), 0, 0
    for cycle in range(1, schedule.cycles + 1):
        for _ in range(schedule.epochs_per_cycle):
            epoch += 1
            losses = []
            for batch in _det_batches(train_features, rng.permutation(len(train_features)), schedule.batch_size):
                chunk_losses = detector_batch_loss(det, batch, weights, "train", rng, opt)
                step += len(chunk_losses)
                losses += chunk_losses
            if not np.all(np.isfinite(losses)):
                raise StateError(f"det: loss became non-finite in epoch {epoch}")
            acc = window_accuracy(det, val_features)
            train_log.add("det", epoch, step, float(np.mean(losses)), acc, schedule.seed, cycle=cycle)
        if acc > best:
            best, best_state = acc, det.state_dict()
    det.load_state_dict(best_state)
    det.trained = True
    changed = [name for name, net in upstream.items() if net.checksum() != sums[name]]
    if changed:
        raise StateError(f"frozen networks changed during detector training: {changed}")
    return TrainResult(det, train_log, best, {"class_weights": weights, "upstream_checksums": sums})


def window_accuracy(det: Detector, features: list[StreamFeatures]) -> float:
    hits = total = 0
    for sf in features:
        if len(sf.labels) == 0:
            continue
        pred = np.argmax(predict_windows(det, sf), axis=1)
        hits += int(np.sum(pred == sf.labels))
        total += len(sf.labels)
    return hits / total if total else float("nan")
