"""Dataset persistence: one frames file per stream plus a JSON annotation file.

Frames file: ``b"SLVD" | version u16 | dtype u8 | T, C, H, W as u32`` followed by
raw little-endian pixels. The annotation file ``annotations.json`` lists every
stream with its intervals and the class names.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

from ..exceptions import IntegrityError, ParseError
from .stream import AnnotatedStream, Interval

FRAMES_MAGIC = b"SLVD"
FRAMES_VERSION = 1
ANNOTATIONS = "annotations.json"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_HEADER = struct.Struct("<4sHB4I")


def write_frames(frames: np.ndarray, path) -> None:
    frames = np.asarray(frames)
    if frames.ndim != 4:
        raise ParseError(f"frames must be [T, C, H, W], got shape {frames.shape}")
    tag = 1 if frames.dtype == np.float64 else 0
    header = _HEADER.pack(FRAMES_MAGIC, FRAMES_VERSION, tag, *frames.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(frames, dtype=_DTYPES[tag]).tobytes())


def read_frames(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise ParseError(f"{path}: truncated frames header")
    magic, version, tag, *shape = _HEADER.unpack_from(buf)
    if magic != FRAMES_MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r}")
    if version != FRAMES_VERSION or tag not in _DTYPES:
        raise ParseError(f"{path}: unsupported version {version} or dtype tag {tag}")
    dtype = _DTYPES[tag]
    count = math.prod(shape)
    if len(buf) - _HEADER.size != count * dtype.itemsize:
        raise ParseError(f"{path}: expected {count * dtype.itemsize} pixel bytes, found {len(buf) - _HEADER.size}")
    return np.frombuffer(buf, dtype=dtype, offset=_HEADER.size).reshape(shape).astype(dtype.newbyteorder("="))


def stream_record(stream: AnnotatedStream, frames_file: str) -> dict:
    rec = {
        "id": stream.stream_id,
        "frames_file": frames_file,
        "length": len(stream),
        "intervals": [
            {"start": iv.start_frame, "end": iv.end_frame, "class": iv.class_id, "phase_switch": int(m)}
            for iv, m in zip(stream.intervals, stream.phase_switches)
        ],
    }
    if stream.provenance is not None:
        rec["provenance"] = stream.provenance
    return rec


def write_dataset(streams, directory, classes) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    records = []
    for s in streams:
        name = f"{s.stream_id}.slvd"
        write_frames(s.frames, directory / name)
        records.append(stream_record(s, name))
    doc = {"classes": list(classes), "streams": records}
    (directory / ANNOTATIONS).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return directory


def _field(obj: dict, key: str, kind, where: str):
    if not isinstance(obj, dict) or key not in obj:
        raise ParseError(f"{where}: missing field {key!r}")
    val = obj[key]
    if kind is int and (isinstance(val, bool) or not isinstance(val, int)):
        raise ParseError(f"{where}: field {key!r} must be an integer, got {val!r}")
    if kind is not int and not isinstance(val, kind):
        raise ParseError(f"{where}: field {key!r} has wrong type {type(val).__name__}")
    return val


def parse_annotations(doc: dict, source: str = ANNOTATIONS) -> tuple[list[str], list[dict]]:
    """Validate an annotation document; returns class names and normalized stream records."""
    classes = _field(doc, "classes", list, source)
    raw_streams = _field(doc, "streams", list, source)
    records = []
    for si, rec in enumerate(raw_streams):
        where = f"{source}: streams[{si}]"
        sid = _field(rec, "id", str, where)
        frames_file = _field(rec, "frames_file", str, where)
        length = _field(rec, "length", int, where)
        intervals, switches = [], []
        prev_end = 0
        for ii, iv in enumerate(_field(rec, "intervals", list, where)):
            iw = f"{where}.intervals[{ii}]"
            start, end = _field(iv, "start", int, iw), _field(iv, "end", int, iw)
            cls = _field(iv, "class", int, iw)
            if start < 0 or end <= start:
                raise ParseError(f"{iw}: end ({end}) must be greater than start ({start}) and start >= 0")
            if end > length:
                raise ParseError(f"{iw}: end {end} exceeds stream length {length}")
            if start < prev_end:
                raise ParseError(f"{iw}: intervals overlap or are unsorted")
            if not 0 <= cls < len(classes):
                raise ParseError(f"{iw}: class {cls} outside 0..{len(classes) - 1}")
            # datasets without phase annotations fall back to the interval midpoint
            switch = iv.get("phase_switch", (start + end) // 2)
            if isinstance(switch, bool) or not isinstance(switch, int):
                raise ParseError(f"{iw}: field 'phase_switch' must be an integer")
            intervals.append(Interval(start, end, cls))
            switches.append(switch)
            prev_end = end
        records.append({"id": sid, "frames_file": frames_file, "length": length,
                        "intervals": intervals, "phase_switches": switches,
                        "provenance": rec.get("provenance")})
    return classes, records


def read_dataset(directory) -> tuple[list[AnnotatedStream], list[str]]:
    directory = Path(directory)
    ann = directory / ANNOTATIONS
    try:
        doc = json.loads(ann.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise IntegrityError(f"{ann} does not exist") from None
    except json.JSONDecodeError as e:
        raise ParseError(f"{ann}: line {e.lineno} column {e.colno}: {e.msg}") from None
    classes, records = parse_annotations(doc, str(ann))
    missing = [r["frames_file"] for r in records if not (directory / r["frames_file"]).is_file()]
    if missing:
        raise IntegrityError(f"{ann}: frames files referenced but missing: {missing}")
    streams = []
    for r in records:
        frames = read_frames(directory / r["frames_file"])
        if len(frames) != r["length"]:
            raise IntegrityError(f"{r['frames_file']}: {len(frames)} frames, annotation says {r['length']}")
        streams.append(AnnotatedStream(frames, r["intervals"], r["phase_switches"], r["id"],
                                       provenance=r["provenance"], classes=tuple(classes)))
    return streams, classes


def read_thumos_annotations(lines, fps: float, classes) -> tuple[list[Interval], list[int]]:
    """Parse ``class start_sec end_sec`` lines into frame intervals.

    Phase switches are unknown in this format and default to interval midpoints.
    """
    index = {name: i for i, name in enumerate(classes)}
    parsed = []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ParseError(f"line {lineno}: expected 'class start_sec end_sec', got {line!r}")
        name, s, e = parts
        if name not in index:
            raise ParseError(f"line {lineno}: unknown class {name!r}")
        try:
            start_s, end_s = float(s), float(e)
        except ValueError:
            raise ParseError(f"line {lineno}: non-numeric time in {line!r}") from None
        start, end = int(math.floor(start_s * fps)), int(math.ceil(end_s * fps))
        if end <= start:
            raise ParseError(f"line {lineno}: end time must be after start time")
        parsed.append(Interval(start, end, index[name]))
    parsed.sort()
    return parsed, [(iv.start_frame + iv.end_frame) // 2 for iv in parsed]
