"""Six-setup ablation: baseline, w/o Aug, w/ CS, w/o F2G, Full, w/ F2G GT.

Per seed one F2G generator and two PR/AR pairs (plain and augmented corpus)
are trained. Detector inputs for every setup are assembled from shared
feature banks, so each setup differs only in what it is stated to differ in.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig, dump_config
from .data.synth import generate_corpus
from .evaluation import map_at, per_frame_map
from .networks import save_checkpoint
from .pipeline import Networks, PipelineConfig, WindowPrediction, events_from_predictions, per_frame_scores
from .training import (
    Corpus,
    FeatureBank,
    StreamFeatures,
    TrainLog,
    build_feature_bank,
    predict_windows,
    train_ar,
    train_det,
    train_f2g,
    train_pr,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Setup:
    name: str
    augmented: bool
    future: str | None  # None, "f2g" or "gt"
    serial_cascade: bool = False


SETUPS = (
    Setup("baseline", False, None),
    Setup("w/o Aug", False, "f2g"),
    Setup("w/ CS", True, "f2g", serial_cascade=True),
    Setup("w/o F2G", True, None),
    Setup("Full", True, "f2g"),
    Setup("w/ F2G GT", True, "gt"),
)


def make_corpus(cfg: RunConfig) -> Corpus:
    d = cfg.data
    kw = d.spec_kwargs()
    train = generate_corpus(d.num_train, d.train_seed, "s", d.instance_range, **kw)
    val = generate_corpus(d.num_val, d.val_seed, "v", d.instance_range, **kw)
    for s in train + val:
        s.classes = tuple(d.classes)
    return Corpus(train, val, tuple(d.classes))


def train_classifiers(corpus: Corpus, cfg: RunConfig, augmented: bool, log_dir: Path | None = None) -> dict:
    """PR and AR on the plain or augmented training split, with wall-clock timings."""
    tag = "aug" if augmented else "plain"
    data = corpus.augmented(cfg.augment.kernel) if augmented else corpus
    out = {}
    for phase, fn, out_dim in (("pr", train_pr, 2), ("ar", train_ar, 2 * corpus.num_classes)):
        t0 = time.perf_counter()
        tl = TrainLog(log_dir / f"{phase}_{tag}.jsonl" if log_dir else None)
        res = fn(data, getattr(cfg.train, phase), cfg.c3d_for(out_dim), cfg.pipeline.tau,
                 cfg.pipeline.train_stride, tl)
        res.extras["seconds"] = time.perf_counter() - t0
        out[phase] = res
    return out


def _predictions(det, sf: StreamFeatures) -> list[WindowPrediction]:
    probs = predict_windows(det, sf)
    return [WindowPrediction(int(t), int(np.argmax(p)), p) for t, p in zip(sf.times, probs)]


def evaluate_detector(det, val_features: list[StreamFeatures], val_streams, pcfg: PipelineConfig,
                      thresholds, num_classes: int) -> dict:
    """Interval mAP per threshold and per-frame mAP on validation streams."""
    by_id = {s.stream_id: s for s in val_streams}
    events, gts, scores = {}, {}, {}
    for sf in val_features:
        preds = _predictions(det, sf)
        s = by_id[sf.stream_id]
        events[sf.stream_id] = events_from_predictions(preds, num_classes, pcfg, sf.stream_id)
        gts[sf.stream_id] = s.intervals
        scores[sf.stream_id] = per_frame_scores(preds, len(s), num_classes, pcfg)
    maps = map_at(events, gts, thresholds, num_classes)
    return {"mAP": {f"{t:g}": v for t, v in maps.items()},
            "mean_mAP": float(np.mean(list(maps.values()))),
            "per_frame_mAP": per_frame_map(scores, gts, num_classes)}


def _banks(corpus: Corpus, nets: Networks, pcfg: PipelineConfig, with_gt: bool) -> dict:
    """Train (stride ``train_stride``) and val (stride ``test_stride``) banks."""
    banks = {}
    for split, streams, stride in (("train", corpus.train, pcfg.train_stride), ("val", corpus.val, pcfg.test_stride)):
        f2g = build_feature_bank(streams, nets, dataclasses.replace(pcfg, use_f2g=True, oracle_future=False), stride)
        banks[(split, "f2g")] = f2g
        if with_gt:
            banks[(split, "gt")] = build_feature_bank(
                streams, nets, dataclasses.replace(pcfg, use_f2g=False, oracle_future=True), stride, real_from=f2g)
    return banks


def _features(bank: FeatureBank, setup: Setup) -> list[StreamFeatures]:
    return bank.stream_features(setup.future is not None, setup.serial_cascade)


def run_seed(corpus: Corpus, cfg: RunConfig, seed: int, out_dir: Path | None = None,
             setups=SETUPS) -> dict:
    """Train every network for one seed and evaluate all setups."""
    cfg = cfg.with_seed(seed)
    pcfg = cfg.pipeline
    k = corpus.num_classes
    seed_dir = Path(out_dir) / f"seed{seed}" if out_dir else None
    timings = {}
    t0 = time.perf_counter()
    f2g = train_f2g(corpus, cfg.train.f2g, cfg.f2g_config(),
                    TrainLog(seed_dir / "f2g.jsonl" if seed_dir else None))
    timings["f2g"] = time.perf_counter() - t0
    upstream = {}
    needed = {s.augmented for s in setups}
    for augmented in sorted(needed):
        cls = train_classifiers(corpus, cfg, augmented, seed_dir)
        tag = "aug" if augmented else "plain"
        timings[f"pr_{tag}"] = cls["pr"].extras["seconds"]
        timings[f"ar_{tag}"] = cls["ar"].extras["seconds"]
        nets = Networks(cls["pr"].network, cls["ar"].network, None, f2g.network)
        t0 = time.perf_counter()
        banks = _banks(corpus, nets, pcfg, with_gt=any(s.future == "gt" and s.augmented == augmented for s in setups))
        timings[f"features_{tag}"] = time.perf_counter() - t0
        upstream[augmented] = (cls, nets, banks)
        if seed_dir:
            for (split, source), bank in banks.items():
                bank.save(seed_dir / f"bank_{tag}_{split}_{source}.npz")
            save_checkpoint(cls["pr"].network, seed_dir / f"pr_{tag}.slck")
            save_checkpoint(cls["ar"].network, seed_dir / f"ar_{tag}.slck")
    if seed_dir:
        save_checkpoint(f2g.network, seed_dir / "f2g.slck")
    rows = {}
    for setup in setups:
        cls, nets, banks = upstream[setup.augmented]
        source = setup.future or "f2g"
        train_feats = _features(banks[("train", source)], setup)
        val_feats = _features(banks[("val", source)], setup)
        t0 = time.perf_counter()
        det = train_det(train_feats, val_feats, k, cfg.train.det, cfg.detector_config(),
                        upstream={"pr": nets.pr, "ar": nets.ar, "f2g": nets.f2g},
                        train_log=TrainLog(seed_dir / f"det_{_slug(setup.name)}.jsonl" if seed_dir else None))
        timings[f"det_{_slug(setup.name)}"] = time.perf_counter() - t0
        metrics = evaluate_detector(det.network, val_feats, corpus.val, pcfg, cfg.ablation.thresholds, k)
        metrics["det_val_accuracy"] = det.best_val
        rows[setup.name] = metrics
        log.info("seed %d %-10s mean mAP %.4f", seed, setup.name, metrics["mean_mAP"])
        if seed_dir:
            save_checkpoint(det.network, seed_dir / f"det_{_slug(setup.name)}.slck")
    upstream_metrics = {}
    for augmented, (cls, _, _) in upstream.items():
        tag = "aug" if augmented else "plain"
        upstream_metrics[f"pr_{tag}_val_accuracy"] = cls["pr"].best_val
        upstream_metrics[f"ar_{tag}_val_accuracy"] = cls["ar"].best_val
        upstream_metrics[f"ar_{tag}_confusion"] = cls["ar"].extras["confusion"].tolist()
    upstream_metrics["f2g_val_loss"] = f2g.best_val
    upstream_metrics["f2g_copy_last_val_loss"] = f2g.extras["copy_last_val"]
    upstream_metrics["f2g_relative_gain"] = f2g.extras["relative_gain"]
    return {"seed": seed, "rows": rows, "upstream": upstream_metrics, "seconds": timings}


def _slug(name: str) -> str:
    return name.lower().replace("/", "").replace(" ", "_").replace("²", "2")


def config_digest(cfg: RunConfig) -> str:
    """Digest of the config and the package sources, so code changes invalidate cached seeds."""
    h = hashlib.sha256(dump_config(cfg).encode())
    for path in sorted(Path(__file__).parent.rglob("*.py")):
        h.update(path.relative_to(Path(__file__).parent).as_posix().encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def run_ablation(cfg: RunConfig, corpus: Corpus | None = None, seeds=None, out_dir=None) -> dict:
    """All seeds; per-seed results are cached in ``out_dir`` keyed by the config digest."""
    corpus = corpus or make_corpus(cfg)
    seeds = tuple(cfg.ablation.seeds if seeds is None else seeds)
    out_dir = Path(out_dir) if out_dir else None
    digest = config_digest(cfg)
    per_seed = []
    for seed in seeds:
        cache = out_dir / f"seed{seed}.json" if out_dir else None
        if cache and cache.is_file():
            doc = json.loads(cache.read_text())
            if doc.get("config_digest") == digest:
                per_seed.append(doc["result"])
                continue
        res = run_seed(corpus, cfg, seed, out_dir)
        per_seed.append(res)
        if cache:
            cache.parent.mkdir(parents=True, exist_ok=True)
            cache.write_text(json.dumps({"config_digest": digest, "result": res}, indent=1, sort_keys=True) + "\n")
    return summarize(per_seed, cfg.ablation.thresholds)


def summarize(per_seed: list[dict], thresholds) -> dict:
    keys = [f"{t:g}" for t in thresholds]
    names = list(per_seed[0]["rows"])
    table = {}
    for name in names:
        rows = [r["rows"][name] for r in per_seed]
        table[name] = {
            "mAP": {k: float(np.mean([r["mAP"][k] for r in rows])) for k in keys},
            "mean_mAP": float(np.mean([r["mean_mAP"] for r in rows])),
            "mean_mAP_per_seed": [r["mean_mAP"] for r in rows],
            "per_frame_mAP": float(np.mean([r["per_frame_mAP"] for r in rows])),
        }
    return {"thresholds": list(thresholds), "seeds": [r["seed"] for r in per_seed], "table": table,
            "per_seed": per_seed}


def format_ablation(summary: dict) -> str:
    keys = [f"{t:g}" for t in summary["thresholds"]]
    lines = ["setup".ljust(12) + "".join(k.rjust(8) for k in keys) + "    mean"]
    for name, row in summary["table"].items():
        lines.append(name.ljust(12) + "".join(f"{row['mAP'][k]:8.3f}" for k in keys) + f"{row['mean_mAP']:8.3f}")
    return "\n".join(lines)
