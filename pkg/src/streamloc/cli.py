"""``streamloc`` command line: data generation, training phases, detection, evaluation.

Every command accepts ``--config``, ``--seed`` and ``--out`` and writes a
``manifest.json`` into ``--out`` holding the command line, the resolved
configuration and content hashes of every input and output file. ``replay``
re-executes a manifest after verifying that its inputs are unchanged.

Exit codes: 0 success, 1 usage or configuration error, 2 data or state error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .ablation import format_ablation, make_corpus, run_ablation
from .augment import augment_corpus
from .config import RunConfig, dump_config, load_config
from .data.io import read_dataset, read_frames, write_dataset
from .data.stream import AnnotatedStream
from .evaluation import evaluation_table, format_table, per_frame_map
from .events import DetectionEvent
from .exceptions import ConfigError, IntegrityError, StreamlocError
from .gradchecks import TOLERANCE, run_all
from .networks import Detector, F2G, ar_network, load_checkpoint, pr_network, save_checkpoint
from .pipeline import Networks, run_stream
from .training import Corpus, TrainLog, build_feature_bank, train_ar, train_det, train_f2g, train_pr

log = logging.getLogger("streamloc")

MANIFEST = "manifest.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# -- hashing and manifests -----------------------------------------------------------

def file_digest(path: Path) -> str:
    """Git-style blob hash of a file's content."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def tree_digests(path: Path) -> dict[str, str]:
    path = Path(path)
    if path.is_file():
        return {str(path): file_digest(path)}
    return {str(p): file_digest(p) for p in sorted(path.rglob("*")) if p.is_file() and p.name != MANIFEST}


def write_manifest(out: Path, argv: list[str], cfg: RunConfig, inputs: list[Path]) -> Path:
    doc = {
        "version": __version__,
        "argv": argv,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "inputs": {k: v for p in inputs for k, v in tree_digests(p).items()},
        "outputs": {str(Path(k).relative_to(out)): v for k, v in tree_digests(out).items()},
    }
    path = out / MANIFEST
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


# -- helpers -------------------------------------------------------------------------

def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.config:
        # keep the exact config bytes next to the outputs
        shutil.copyfile(args.config, out / "config.json")
    else:
        (out / "config.json").write_text(dump_config(load_config()))
    return out


def _load_corpus(data: Path) -> Corpus:
    data = Path(data)
    train, classes = read_dataset(data / "train")
    val, val_classes = read_dataset(data / "val") if (data / "val").is_dir() else ([], classes)
    if list(val_classes) != list(classes):
        raise IntegrityError(f"{data}: train and val class lists differ")
    return Corpus(train, val, tuple(classes))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _mode_config(cfg: RunConfig, args):
    p = cfg.pipeline
    return dataclasses.replace(
        p,
        use_f2g=p.use_f2g and not getattr(args, "no_f2g", False),
        serial_cascade=p.serial_cascade or getattr(args, "serial_cascade", False),
        oracle_future=p.oracle_future or getattr(args, "oracle_future", False),
    )


def _load_networks(ckpt: Path, cfg: RunConfig, k: int, need_f2g: bool, need_det: bool = True) -> Networks:
    ckpt = Path(ckpt)
    for name in ["pr", "ar"] + (["f2g"] if need_f2g else []) + (["det"] if need_det else []):
        if not (ckpt / f"{name}.slck").is_file():
            raise IntegrityError(f"missing checkpoint {ckpt / (name + '.slck')}")
    pr = load_checkpoint(ckpt / "pr.slck", pr_network(cfg.c3d_for(2)))
    ar = load_checkpoint(ckpt / "ar.slck", ar_network(k, cfg.c3d_for(2 * k)))
    f2g = load_checkpoint(ckpt / "f2g.slck", F2G(cfg.f2g_config())) if need_f2g else None
    det = load_checkpoint(ckpt / "det.slck", Detector(cfg.detector_config())) if need_det else None
    return Networks(pr, ar, det, f2g)


# -- commands ------------------------------------------------------------------------

def cmd_gen_data(args, cfg: RunConfig, out: Path) -> list[Path]:
    d = cfg.data
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, data=dataclasses.replace(d, train_seed=args.seed, val_seed=args.seed + 1))
    corpus = make_corpus(cfg)
    write_dataset(corpus.train, out / "train", corpus.classes)
    write_dataset(corpus.val, out / "val", corpus.classes)
    print(f"wrote {len(corpus.train)} train and {len(corpus.val)} val streams to {out}")
    return []


def cmd_augment(args, cfg: RunConfig, out: Path) -> list[Path]:
    corpus = _load_corpus(args.data)
    train = augment_corpus(corpus.train, cfg.augment.kernel)
    write_dataset(train, out / "train", corpus.classes)
    write_dataset(corpus.val, out / "val", corpus.classes)
    print(f"wrote {len(train)} augmented train streams to {out / 'train'}")
    return [Path(args.data)]


def _train_c3d(args, cfg: RunConfig, out: Path, phase: str) -> list[Path]:
    corpus = _load_corpus(args.data)
    k = corpus.num_classes
    tl = TrainLog(out / f"{phase}_log.jsonl")
    p = cfg.pipeline
    if phase == "pr":
        res = train_pr(corpus, cfg.train.pr, cfg.c3d_for(2), p.tau, p.train_stride, tl)
        metrics = {"best_val_accuracy": res.best_val}
    else:
        res = train_ar(corpus, cfg.train.ar, cfg.c3d_for(2 * k), p.tau, p.train_stride, tl)
        metrics = {"best_val_accuracy": res.best_val, "confusion": res.extras["confusion"].tolist(),
                   "labels": [f"{c}:{ph}" for c in corpus.classes for ph in ("beginning", "finishing")]}
    save_checkpoint(res.network, out / f"{phase}.slck")
    _write_json(out / f"{phase}_metrics.json", metrics)
    print(f"{phase}: best val accuracy {res.best_val:.4f}")
    return [Path(args.data)]


def cmd_train_pr(args, cfg, out):
    return _train_c3d(args, cfg, out, "pr")


def cmd_train_ar(args, cfg, out):
    return _train_c3d(args, cfg, out, "ar")


def cmd_train_f2g(args, cfg: RunConfig, out: Path) -> list[Path]:
    corpus = _load_corpus(args.data)
    res = train_f2g(corpus, cfg.train.f2g, cfg.f2g_config(), TrainLog(out / "f2g_log.jsonl"))
    save_checkpoint(res.network, out / "f2g.slck")
    _write_json(out / "f2g_metrics.json", {"best_val_loss": res.best_val, **res.extras})
    print(f"f2g: val loss {res.best_val:.5f}, copy-last {res.extras['copy_last_val']:.5f}")
    return [Path(args.data)]


def cmd_train_det(args, cfg: RunConfig, out: Path) -> list[Path]:
    corpus = _load_corpus(args.data)
    pcfg = _mode_config(cfg, args)
    nets = _load_networks(args.checkpoint_dir, cfg, corpus.num_classes, pcfg.needs_f2g, need_det=False)
    train_bank = build_feature_bank(corpus.train, nets, pcfg, pcfg.train_stride, real_only=not pcfg.uses_future)
    val_bank = build_feature_bank(corpus.val, nets, pcfg, pcfg.test_stride, real_only=not pcfg.uses_future)
    upstream = {"pr": nets.pr, "ar": nets.ar}
    if nets.f2g is not None:
        upstream["f2g"] = nets.f2g
    res = train_det(train_bank.stream_features(pcfg.uses_future, pcfg.serial_cascade),
                    val_bank.stream_features(pcfg.uses_future, pcfg.serial_cascade),
                    corpus.num_classes, cfg.train.det, cfg.detector_config(), upstream,
                    TrainLog(out / "det_log.jsonl"))
    save_checkpoint(res.network, out / "det.slck")
    _write_json(out / "det_metrics.json", {"best_val_window_accuracy": res.best_val,
                                           "class_weights": res.extras["class_weights"].tolist(),
                                           "pipeline": dataclasses.asdict(pcfg)})
    print(f"det: best val window accuracy {res.best_val:.4f}")
    return [Path(args.data), Path(args.checkpoint_dir)]


def _streams_from(path: Path, stream_id: str | None) -> tuple[list[AnnotatedStream], list[str] | None]:
    path = Path(path)
    if path.is_file():
        return [AnnotatedStream(read_frames(path), [], [], path.stem)], None
    streams, classes = read_dataset(path)
    if stream_id is not None:
        streams = [s for s in streams if s.stream_id == stream_id]
        if not streams:
            raise IntegrityError(f"{path}: no stream with id {stream_id!r}")
    return streams, classes


def cmd_detect(args, cfg: RunConfig, out: Path) -> list[Path]:
    pcfg = _mode_config(cfg, args)
    k = len(cfg.data.classes)
    nets = _load_networks(args.checkpoint_dir, cfg, k, pcfg.needs_f2g)
    streams, _ = _streams_from(args.stream, args.stream_id)
    results = []
    for s in streams:
        def emit(p, sid=s.stream_id):
            print(json.dumps({"stream_id": sid, **p.to_json()}), flush=True)

        res = run_stream(s, pcfg, nets, batched=args.batched, on_prediction=emit)
        doc = res.to_json()
        doc["config"] = {"pipeline": doc["config"], "classes": list(cfg.data.classes)}
        results.append(doc)
        np.save(out / f"{s.stream_id}.scores.npy", res.per_frame_scores)
    _write_json(out / "detections.json", results if len(results) != 1 else results[0])
    return [Path(args.checkpoint_dir), Path(args.stream)]


def load_detections(path: Path) -> dict[str, list[DetectionEvent]]:
    doc = json.loads(Path(path).read_text())
    docs = doc if isinstance(doc, list) else [doc]
    out = {}
    for d in docs:
        sid = d["stream_id"]
        out[sid] = [DetectionEvent(int(e["class"]), int(e["start"]), int(e["end"]), float(e["confidence"]), sid)
                    for e in d["events"]]
    return out


def cmd_eval(args, cfg: RunConfig, out: Path) -> list[Path]:
    from .data.io import parse_annotations

    ann_path = Path(args.annotations)
    if ann_path.is_dir():
        ann_path = ann_path / "annotations.json"
    classes, records = parse_annotations(json.loads(ann_path.read_text()), str(ann_path))
    detections = load_detections(args.detections)
    gts = {r["id"]: r["intervals"] for r in records if r["id"] in detections}
    missing = sorted(set(detections) - set(gts))
    if missing:
        raise IntegrityError(f"detections for streams without annotations: {missing}")
    table = evaluation_table({sid: detections[sid] for sid in gts}, gts, cfg.eval_thresholds, classes)
    scores_dir = Path(args.detections).parent
    score_files = {sid: scores_dir / f"{sid}.scores.npy" for sid in gts}
    if all(p.is_file() for p in score_files.values()):
        table["per_frame_mAP"] = per_frame_map({sid: np.load(p) for sid, p in score_files.items()}, gts, len(classes))
    _write_json(out / "results.json", table)
    text = format_table(table)
    if "per_frame_mAP" in table:
        text += f"\nper-frame mAP {table['per_frame_mAP']:.4f}"
    (out / "results.txt").write_text(text + "\n")
    print(text)
    return [Path(args.detections), ann_path]


def cmd_ablate(args, cfg: RunConfig, out: Path) -> list[Path]:
    seeds = None if args.seeds is None else [int(s) for s in args.seeds.split(",")]
    summary = run_ablation(cfg, seeds=seeds, out_dir=out / "runs")
    _write_json(out / "ablation.json", summary)
    text = format_ablation(summary)
    (out / "ablation.txt").write_text(text + "\n")
    print(text)
    return []


def cmd_gradcheck(args, cfg: RunConfig, out: Path) -> list[Path]:
    reports = run_all(cfg.seed)
    doc = {name: {"max_error": r.max_error, "errors": r.errors, "passed": r.passed(TOLERANCE)}
           for name, r in reports.items()}
    _write_json(out / "gradcheck.json", {"tolerance": TOLERANCE, "checks": doc})
    for name, r in reports.items():
        print(f"{name:<18s} {r.max_error:.3e} {'ok' if r.passed(TOLERANCE) else 'FAIL'}")
    if not all(r.passed(TOLERANCE) for r in reports.values()):
        raise StreamlocError("gradient check failed")
    return []


COMMANDS = {
    "gen-data": cmd_gen_data,
    "augment": cmd_augment,
    "train-pr": cmd_train_pr,
    "train-ar": cmd_train_ar,
    "train-f2g": cmd_train_f2g,
    "train-det": cmd_train_det,
    "detect": cmd_detect,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="streamloc", description="Online temporal action localization on synthetic streams.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in [*COMMANDS, "replay"]:
        p = sub.add_parser(name)
        p.add_argument("--out", required=True, help="output directory")
        if name == "replay":
            p.add_argument("manifest", help="manifest.json of an earlier run")
            continue
        p.add_argument("--config", help="JSON config (defaults to the packaged profile)")
        p.add_argument("--seed", type=int, help="override the training seed")
        if name in ("augment", "train-pr", "train-ar", "train-f2g", "train-det"):
            p.add_argument("--data", required=True, help="dataset directory with train/ and val/")
        if name in ("train-det", "detect"):
            p.add_argument("--checkpoint-dir", required=True)
            p.add_argument("--no-f2g", action="store_true", help="zero future features (baseline)")
            p.add_argument("--serial-cascade", action="store_true", help="AR only on PR-positive windows")
            p.add_argument("--oracle-future", action="store_true", help="true future frames (non-causal)")
        if name == "detect":
            p.add_argument("--stream", required=True, help="frames file or dataset directory")
            p.add_argument("--stream-id", help="pick one stream of a dataset directory")
            p.add_argument("--batched", action="store_true", help="batch feature extraction per stream")
        if name == "eval":
            p.add_argument("--detections", required=True)
            p.add_argument("--annotations", required=True, help="annotations.json or its directory")
        if name == "ablate":
            p.add_argument("--seeds", help="comma separated seeds (default: config)")
    return parser


def replay(manifest_path: Path, out: str) -> int:
    doc = json.loads(Path(manifest_path).read_text())
    for path, digest in doc["inputs"].items():
        if not Path(path).is_file() or file_digest(Path(path)) != digest:
            raise IntegrityError(f"input {path} changed since the manifest was written")
    argv = list(doc["argv"])
    i = argv.index("--out")
    argv[i + 1] = out
    cfg_copy = Path(manifest_path).parent / "config.json"
    if "--config" in argv:
        argv[argv.index("--config") + 1] = str(cfg_copy)
    return main(argv)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if args.command == "replay":
            return replay(Path(args.manifest), args.out)
        cfg = _config(args)
        out = _out(args)
        inputs = COMMANDS[args.command](args, cfg, out)
        if args.config:
            inputs = [Path(args.config), *inputs]
        write_manifest(out, argv, cfg, inputs)
        return 0
    except UsageError as e:
        print(f"streamloc: error: {e}", file=sys.stderr)
        return 1
    except ConfigError as e:
        print(f"streamloc: config error: {e}", file=sys.stderr)
        return 1
    except (StreamlocError, ValueError, OSError) as e:
        print(f"streamloc: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
